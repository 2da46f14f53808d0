//! Cubic Lagrange interpolation on uniform axes and trigonometric interpolation in θ.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::grid::Grid;

/// Interpolation stencil on a uniform axis `x_i = -extent + i h`, `i < n`.
///
/// Returns the first node index of the 4-point window and its weights.
/// Points outside the axis are clamped to the nearest end window (mild extrapolation).
pub(crate) fn cubic_stencil(x: f64, extent: f64, h: f64, n: usize) -> (usize, [f64; 4]) {
    if n < 4 {
        let s = ((x + extent) / h).round().clamp(0.0, (n - 1) as f64) as usize;
        let mut w = [0.0; 4];
        w[0] = 1.0;
        return (s, w);
    }
    let s = (x + extent) / h;
    let base = (libm::floor(s) as i64 - 1).clamp(0, n as i64 - 4) as usize;
    let t = s - base as f64;
    let mut w = [0.0; 4];
    for (j, wj) in w.iter_mut().enumerate() {
        let mut p = 1.0;
        for k in 0..4 {
            if k != j {
                p *= (t - k as f64) / (j as f64 - k as f64);
            }
        }
        *wj = p;
    }
    (base, w)
}

/// Tensor-product cubic interpolation of every θ-column of `values` at `y`.
pub(crate) fn sample_columns(grid: &Grid, values: &[f64], y: &[f64], out: &mut [f64]) {
    let d = grid.dim();
    let nt = grid.n_theta();
    let mut base = [0usize; 3];
    let mut w = [[0.0; 4]; 3];
    for a in 0..d {
        let ax = grid.axis(a);
        let (b, wa) = cubic_stencil(y[a], ax.extent, ax.h(), ax.n);
        base[a] = b;
        w[a] = wa;
    }
    out.iter_mut().for_each(|o| *o = 0.0);
    let combos = 1usize << (2 * d);
    for c in 0..combos {
        let mut k = 0;
        let mut weight = 1.0;
        for a in 0..d {
            let off = (c >> (2 * a)) & 3;
            k = k * grid.axis(a).n + base[a] + off;
            weight *= w[a][off];
        }
        if weight == 0.0 {
            continue;
        }
        for (o, v) in out.iter_mut().zip(&values[k * nt..(k + 1) * nt]) {
            *o += weight * v;
        }
    }
}

/// Real trigonometric interpolant of equispaced samples on the circle.
pub(crate) struct Trig {
    /// `(a_k, b_k)` for `k = 0..=n/2`; the Nyquist cosine term is already halved.
    pub coef: Vec<(f64, f64)>,
}

impl Trig {
    pub fn new(samples: &[f64]) -> Self {
        let n = samples.len();
        let half = n / 2;
        let h = 2.0 * PI / n as f64;
        let coef = (0..=half)
            .map(|k| {
                let (mut a, mut b) = (0.0, 0.0);
                for (j, &f) in samples.iter().enumerate() {
                    let (s, c) = libm::sincos(k as f64 * j as f64 * h);
                    a += f * c;
                    b += f * s;
                }
                let scale = if k == 0 || 2 * k == n { 1.0 } else { 2.0 };
                (a * scale / n as f64, b * scale / n as f64)
            })
            .collect();
        Trig { coef }
    }

    /// Value and first derivative at `theta`.
    pub fn eval(&self, theta: f64) -> (f64, f64) {
        let (mut f, mut df) = (0.0, 0.0);
        for (k, &(a, b)) in self.coef.iter().enumerate() {
            let kf = k as f64;
            let (s, c) = libm::sincos(kf * theta);
            f += a * c + b * s;
            df += kf * (b * c - a * s);
        }
        (f, df)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_cubics() {
        let (extent, n) = (2.0, 41);
        let h = 2.0 * extent / (n - 1) as f64;
        let f = |x: f64| 0.3 - x + 2.0 * x * x - 0.7 * x * x * x;
        for &x in &[-1.97, -0.33, 0.0, 0.41, 1.99] {
            let (b, w) = cubic_stencil(x, extent, h, n);
            let v: f64 = (0..4).map(|j| w[j] * f(-extent + (b + j) as f64 * h)).sum();
            assert!((v - f(x)).abs() < 1e-12, "{x}");
        }
    }

    #[test]
    fn trig_interpolant_is_exact_on_band_limited_data() {
        let n = 16;
        let f = |t: f64| 1.0 + 0.3 * libm::cos(t) - 0.2 * libm::sin(3.0 * t) + 0.1 * libm::cos(7.0 * t);
        let df = |t: f64| -0.3 * libm::sin(t) - 0.6 * libm::cos(3.0 * t) - 0.7 * libm::sin(7.0 * t);
        let s: Vec<f64> = (0..n).map(|j| f(j as f64 * 2.0 * PI / n as f64)).collect();
        let t = Trig::new(&s);
        for x in [0.1, 1.3, 4.0] {
            let (v, dv) = t.eval(x);
            assert!((v - f(x)).abs() < 1e-13 && (dv - df(x)).abs() < 1e-12);
        }
    }
}

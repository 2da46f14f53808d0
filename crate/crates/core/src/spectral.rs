//! θ-frequency splitting, the circle embedding inequality, one-dimensional
//! discretizations of the linearized operators and propagator decay fits.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cutoff::{build_tilde_chi, chi_scaled, CutoffFamily};
use crate::error::{domain, structural, Error, Result};
use crate::grid::{FieldRole, GraphField};
use crate::interp::Trig;

/// `f = w₀ + e^{iθ}w₁ + e^{−iθ}w₋₁ + P_{θ≥2}f` at every y-node.
#[derive(Debug, Clone)]
pub struct ThetaSplit {
    pub w0: Vec<f64>,
    /// `(Re w₁, Im w₁)`; `w₋₁` is the conjugate.
    pub w1: Vec<(f64, f64)>,
    pub high: GraphField,
}

impl ThetaSplit {
    pub fn w_minus1(&self, k: usize) -> (f64, f64) {
        let (re, im) = self.w1[k];
        (re, -im)
    }

    /// `|w₁| = |w₋₁|` at y-node `k`.
    pub fn w1_abs(&self, k: usize) -> f64 {
        let (re, im) = self.w1[k];
        libm::sqrt(re * re + im * im)
    }

    pub fn reconstruct(&self) -> Vec<f64> {
        let g = self.high.grid();
        let nt = g.n_theta();
        let mut out = self.high.values().to_vec();
        for k in 0..g.n_y_nodes() {
            let (re, im) = self.w1[k];
            for j in 0..nt {
                let (s, c) = libm::sincos(g.theta(j));
                out[k * nt + j] += self.w0[k] + 2.0 * (re * c - im * s);
            }
        }
        out
    }
}

pub fn theta_split(f: &GraphField) -> ThetaSplit {
    let g = f.grid();
    let nt = g.n_theta();
    let trig: Vec<(f64, f64)> = (0..nt).map(|j| libm::sincos(g.theta(j))).collect();
    let mut w0 = Vec::with_capacity(g.n_y_nodes());
    let mut w1 = Vec::with_capacity(g.n_y_nodes());
    let mut high = Vec::with_capacity(f.values().len());
    for col in f.values().chunks_exact(nt) {
        let mean = col.iter().sum::<f64>() / nt as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (v, &(s, c)) in col.iter().zip(&trig) {
            re += v * c;
            im -= v * s;
        }
        re /= nt as f64;
        im /= nt as f64;
        for (v, &(s, c)) in col.iter().zip(&trig) {
            high.push(v - mean - 2.0 * (re * c - im * s));
        }
        w0.push(mean);
        w1.push((re, im));
    }
    ThetaSplit { w0, w1, high: GraphField::raw(g, high, FieldRole::Remainder) }
}

/// `‖∂_θ^l P_{θ≥m} f‖_{L²_θ}` of equispaced samples, `∫₀^{2π}` convention.
pub fn theta_l2(samples: &[f64], l: u32, m: usize) -> f64 {
    let t = Trig::new(samples);
    let mut s = 0.0;
    for (k, &(a, b)) in t.coef.iter().enumerate().skip(m.max(1)) {
        s += PI * libm::pow(k as f64, 2.0 * l as f64) * (a * a + b * b);
    }
    libm::sqrt(s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

/// `‖P_{θ≥2}f‖_∞` against `‖∂_θ^l P_{θ≥2}f‖_{L²_θ}`; the sup is taken on an 8× refined circle.
pub fn embedding_check(samples: &[f64], l: u32) -> Result<EmbeddingCheck> {
    if !(1..=3).contains(&l) {
        return Err(structural(format!("embedding order {l} not in 1..=3")));
    }
    let t = Trig::new(samples);
    let fine = 8 * samples.len();
    let mut lhs: f64 = 0.0;
    for i in 0..fine {
        let th = 2.0 * PI * i as f64 / fine as f64;
        let mut v = 0.0;
        for (k, &(a, b)) in t.coef.iter().enumerate().skip(2) {
            let (s, c) = libm::sincos(k as f64 * th);
            v += a * c + b * s;
        }
        lhs = lhs.max(v.abs());
    }
    let rhs = theta_l2(samples, l, 2);
    let ratio = if rhs > 0.0 { lhs / rhs } else { 0.0 };
    Ok(EmbeddingCheck { lhs, rhs, ratio })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorTag {
    /// `−∂² + ½ y ∂`.
    Bare,
    /// `−∂² + y²/16 − 1/4`.
    BareConjugated,
    /// `−∂² + ½ y ∂ − ½ − a − τ^{−1/2} + V₁`.
    H,
    /// `−∂² + y²/16 − 1/4 − ½ − a − τ^{−1/2} + V₁ + V₂`.
    Conjugated,
}

impl OperatorTag {
    pub fn is_symmetric(self) -> bool {
        matches!(self, OperatorTag::BareConjugated | OperatorTag::Conjugated)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorParams {
    pub a: f64,
    /// Scalar `B` of the one-dimensional profile.
    pub b: f64,
    pub omega: f64,
    pub tau: f64,
}

#[derive(Debug, Clone)]
pub struct OperatorMatrix {
    pub tag: OperatorTag,
    pub y: Vec<f64>,
    pub h: f64,
    pub matrix: DMatrix<f64>,
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
}

/// Dense d=1 discretization on `[−Y, Y]` with zero Dirichlet data beyond the ends,
/// fourth-order centred differences.
pub fn build_operator(
    tag: OperatorTag,
    n_y: usize,
    y_max: f64,
    params: &OperatorParams,
    family: &CutoffFamily,
) -> Result<OperatorMatrix> {
    if n_y < 9 || !(y_max > 0.0) {
        return Err(structural(format!("operator grid n_y = {n_y}, Y = {y_max} too small")));
    }
    let h = 2.0 * y_max / (n_y - 1) as f64;
    let y: Vec<f64> = (0..n_y).map(|i| -y_max + i as f64 * h).collect();
    let d2 = [-1.0, 16.0, -30.0, 16.0, -1.0].map(|w| w / (12.0 * h * h));
    let d1 = [1.0, -8.0, 0.0, 8.0, -1.0].map(|w| w / (12.0 * h));
    let mut m = DMatrix::<f64>::zeros(n_y, n_y);
    let drift = matches!(tag, OperatorTag::Bare | OperatorTag::H);
    for i in 0..n_y {
        for (o, (&w2, &w1)) in d2.iter().zip(&d1).enumerate() {
            let j = i as i64 + o as i64 - 2;
            if j < 0 || j >= n_y as i64 {
                continue;
            }
            let mut v = -w2;
            if drift {
                v += 0.5 * y[i] * w1;
            }
            m[(i, j as usize)] += v;
        }
    }
    let mut v1 = vec![0.0; n_y];
    let mut v2 = vec![0.0; n_y];
    let with_potentials = matches!(tag, OperatorTag::H | OperatorTag::Conjugated);
    if with_potentials {
        let p = params;
        if !(p.a > 0.0 && p.tau > 0.0 && p.omega > 0.0) {
            return Err(domain("operator needs a, tau, Omega > 0"));
        }
        let mut tilde = None;
        for i in 0..n_y {
            let yy = y[i] * y[i];
            let q = 2.0 + p.b * yy;
            if !(q > 0.0) {
                return Err(domain(format!("2 + B y^2 = {q} at y = {}", y[i])));
            }
            let chi2 = chi_scaled(family, 2.0 * p.omega, &[y[i]]).value;
            v1[i] = (p.a * p.b * yy / q + 1.0 / libm::sqrt(p.tau)) * chi2;
            if tag == OperatorTag::Conjugated {
                let jet = chi_scaled(family, p.omega, &[y[i]]);
                let ydchi = y[i] * jet.grad[0];
                if ydchi != 0.0 {
                    if tilde.is_none() {
                        tilde = Some(build_tilde_chi(p.omega, family.eps())?);
                    }
                    let t = tilde.as_ref().map(|t| t.at(&[y[i]])).unwrap_or(0.0);
                    v2[i] = if t == 0.0 { 0.0 } else { 0.5 * (t * ydchi / jet.value).abs() };
                }
            }
        }
        if let Some((i, v)) = v1.iter().chain(&v2).enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(Error::ConstructionInvalid(format!(
                "potential entry {v} < 0 at index {i}"
            )));
        }
    }
    for i in 0..n_y {
        let pot = match tag {
            OperatorTag::Bare => 0.0,
            OperatorTag::BareConjugated => y[i] * y[i] / 16.0 - 0.25,
            OperatorTag::H => -0.5 - params.a - 1.0 / libm::sqrt(params.tau) + v1[i],
            OperatorTag::Conjugated => {
                y[i] * y[i] / 16.0 - 0.25 - 0.5 - params.a - 1.0 / libm::sqrt(params.tau)
                    + v1[i]
                    + v2[i]
            }
        };
        m[(i, i)] += pot;
    }
    let op = OperatorMatrix { tag, y, h, matrix: m, v1, v2 };
    if tag.is_symmetric() {
        let asym = op.asymmetry();
        if asym > 1e-10 {
            return Err(Error::ConstructionInvalid(format!("asymmetry {asym} above 1e-10")));
        }
    }
    Ok(op)
}

impl OperatorMatrix {
    pub fn asymmetry(&self) -> f64 {
        let m = &self.matrix;
        let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
        let mut worst: f64 = 0.0;
        for i in 0..m.nrows() {
            for j in i + 1..m.ncols() {
                worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
            }
        }
        worst / scale
    }

    fn require_symmetric(&self) -> Result<()> {
        if self.asymmetry() > 1e-10 {
            return Err(structural(format!("operator {:?} is not symmetric", self.tag)));
        }
        Ok(())
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        self.require_symmetric()?;
        let mut ev: Vec<f64> = SymmetricEigen::new(self.matrix.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
        Ok(ev)
    }

    /// Adds a diagonal potential.
    pub fn with_potential(&self, pot: &[f64]) -> OperatorMatrix {
        let mut out = self.clone();
        for (i, p) in pot.iter().enumerate() {
            out.matrix[(i, i)] += p;
        }
        out
    }

    /// `e^{−y²/8}` times the Gaussian-weighted low modes `1, y, y²/2 − 1, …` up to `count`
    /// (Hermite-type polynomials of increasing degree).
    pub fn weighted_modes(&self, count: usize) -> Vec<Vec<f64>> {
        (0..count)
            .map(|n| {
                self.y
                    .iter()
                    .map(|&y| {
                        let p = match n {
                            0 => 1.0,
                            1 => y,
                            2 => 0.5 * y * y - 1.0,
                            _ => libm::pow(y, n as f64),
                        };
                        p * libm::exp(-y * y / 8.0)
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayFit {
    /// Smallest fitted rate over all samples.
    pub rate: f64,
    pub rates: Vec<f64>,
    /// Smallest eigenvalue of the projected operator on the complement of the modes.
    pub gap: f64,
}

/// Evolves random data under `−P M P` on the complement of `modes` and fits the decay
/// rate of `‖⟨y⟩⁻³ g(t)‖_∞` over `[horizon/2, horizon]`.
pub fn propagator_decay_check(
    op: &OperatorMatrix,
    modes: &[Vec<f64>],
    horizon: f64,
    samples: usize,
    seed: u64,
) -> Result<DecayFit> {
    op.require_symmetric()?;
    let n = op.y.len();
    if modes.iter().any(|m| m.len() != n) {
        return Err(structural("mode length differs from the operator size"));
    }
    if !(horizon > 0.0) || samples == 0 {
        return Err(structural("decay check needs a positive horizon and samples"));
    }
    // Gram–Schmidt in the discrete inner product (twice for stability).
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for m in modes {
        let mut v = DVector::from_column_slice(m);
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&v);
                v -= q * c;
            }
        }
        let nrm = v.norm();
        if nrm < 1e-12 {
            return Err(structural("projected modes are linearly dependent"));
        }
        basis.push(v / nrm);
    }
    let project = |v: &DVector<f64>| -> DVector<f64> {
        let mut out = v.clone();
        for q in &basis {
            let c = q.dot(&out);
            out -= q * c;
        }
        out
    };
    let mut p = DMatrix::<f64>::identity(n, n);
    for q in &basis {
        p -= q * q.transpose();
    }
    let a = &p * &op.matrix * &p;
    let a = (&a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(a);
    let kept: Vec<usize> = (0..n)
        .filter(|&k| project(&eig.eigenvectors.column(k).into_owned()).norm_squared() > 0.5)
        .collect();
    let gap = kept.iter().map(|&k| eig.eigenvalues[k]).fold(f64::INFINITY, f64::min);
    let weight: Vec<f64> = op.y.iter().map(|y| libm::pow(1.0 + y * y, -1.5)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let times: Vec<f64> = (0..=20).map(|i| horizon * (0.5 + 0.5 * i as f64 / 20.0)).collect();
    let mut rates = Vec::with_capacity(samples);
    for _ in 0..samples {
        let g = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let g = project(&g);
        let coef: Vec<(usize, f64)> =
            kept.iter().map(|&k| (k, eig.eigenvectors.column(k).dot(&g))).collect();
        let mut xs = Vec::with_capacity(times.len());
        let mut ys = Vec::with_capacity(times.len());
        for &t in &times {
            let mut f = DVector::<f64>::zeros(n);
            for &(k, c) in &coef {
                f += eig.eigenvectors.column(k) * (c * libm::exp(-eig.eigenvalues[k] * t));
            }
            let sup = f.iter().zip(&weight).fold(0.0f64, |m, (v, w)| m.max((v * w).abs()));
            if sup > 0.0 {
                xs.push(t);
                ys.push(libm::log(sup));
            }
        }
        if xs.len() < 2 {
            continue;
        }
        rates.push(-least_squares_slope(&xs, &ys));
    }
    let rate = rates.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(DecayFit { rate, rates, gap })
}

pub fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cutoff::build_chi;
    use crate::grid::Grid;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn trig_poly(rng: &mut ChaCha8Rng, deg: usize, n: usize) -> Vec<f64> {
        let c: Vec<(f64, f64)> =
            (0..=deg).map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        (0..n)
            .map(|j| {
                let th = 2.0 * PI * j as f64 / n as f64;
                c.iter()
                    .enumerate()
                    .map(|(k, &(a, b))| a * libm::cos(k as f64 * th) + b * libm::sin(k as f64 * th))
                    .sum()
            })
            .collect()
    }

    #[test]
    fn split_examples() {
        let g = Grid::new(1, 9, 8.0, 16).unwrap();
        let f = GraphField::from_fn(&g, FieldRole::Remainder, |_, t| libm::cos(t)).unwrap();
        let s = theta_split(&f);
        assert_abs_diff_eq!(s.w1[0].0, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s.w_minus1(0).0, 0.5, epsilon = 1e-15);
        assert!(s.w0[0].abs() < 1e-15 && s.high.sup_abs() < 1e-15);
        let f = GraphField::from_fn(&g, FieldRole::Remainder, |_, t| libm::cos(2.0 * t)).unwrap();
        let s = theta_split(&f);
        assert!(s.w0[3].abs() < 1e-15 && s.w1_abs(3) < 1e-15);
        assert_abs_diff_eq!(s.high.at(3, 0), 1.0, epsilon = 1e-15);
        let f = GraphField::from_fn(&g, FieldRole::Remainder, |_, _| 3.0).unwrap();
        assert_abs_diff_eq!(theta_split(&f).w0[2], 3.0, epsilon = 1e-15);
    }

    #[test]
    fn embedding_examples() {
        let n = 32;
        let f: Vec<f64> = (0..n).map(|j| libm::cos(2.0 * 2.0 * PI * j as f64 / n as f64)).collect();
        let e = embedding_check(&f, 1).unwrap();
        assert_abs_diff_eq!(e.lhs, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.rhs, 2.0 * libm::sqrt(PI), epsilon = 1e-12);
        assert_abs_diff_eq!(e.ratio, 0.2821, epsilon = 1e-4);
        let low: Vec<f64> = (0..n).map(|j| 1.0 + libm::sin(2.0 * PI * j as f64 / n as f64)).collect();
        assert!(embedding_check(&low, 2).unwrap().lhs < 1e-14);
        assert!(embedding_check(&f, 4).is_err());
    }

    #[test]
    fn embedding_ratio_bounded_on_random_polynomials() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let f = trig_poly(&mut rng, 10, 32);
            for l in 1..=3 {
                assert!(embedding_check(&f, l).unwrap().ratio <= 3.0);
            }
        }
    }

    fn params() -> OperatorParams {
        OperatorParams { a: 0.5 + 1.0 / 200.0, b: 0.01, omega: 40.0, tau: 100.0 }
    }

    #[test]
    fn bare_conjugated_spectrum_is_harmonic() {
        let fam = build_chi(0.25).unwrap();
        let op = build_operator(OperatorTag::BareConjugated, 401, 12.0, &params(), &fam).unwrap();
        let ev = op.eigenvalues().unwrap();
        for n in 0..=5 {
            assert!((ev[n] - 0.5 * n as f64).abs() <= 1e-3, "{n}: {}", ev[n]);
        }
        assert!(build_operator(OperatorTag::Bare, 101, 12.0, &params(), &fam).unwrap().eigenvalues().is_err());
    }

    #[test]
    fn potentials() {
        let fam = build_chi(1.0).unwrap();
        let p = OperatorParams { a: 0.5, b: 0.02, omega: 17.0, tau: 64.0 };
        let op = build_operator(OperatorTag::Conjugated, 601, 30.0, &p, &fam).unwrap();
        let mid = 300;
        assert_abs_diff_eq!(op.v1[mid], 0.125, epsilon = 1e-15);
        for (i, &y) in op.y.iter().enumerate() {
            assert!(op.v1[i] >= 0.0 && op.v2[i] >= 0.0);
            if y.abs() <= 17.0 {
                assert_eq!(op.v2[i], 0.0);
            }
        }
        assert!(op.v2.iter().any(|&v| v > 0.0));
        let neg = OperatorParams { b: -0.001, ..p };
        assert!(matches!(
            build_operator(OperatorTag::Conjugated, 601, 30.0, &neg, &fam),
            Err(Error::ConstructionInvalid(_))
        ));
    }

    #[test]
    fn decay_rates() {
        let fam = build_chi(0.25).unwrap();
        let bare = build_operator(OperatorTag::BareConjugated, 401, 12.0, &params(), &fam).unwrap();
        let fit = propagator_decay_check(&bare, &bare.weighted_modes(3), 10.0, 20, 1).unwrap();
        assert!(fit.rate >= 1.45, "{fit:?}");
        let none = propagator_decay_check(&bare, &[], 10.0, 5, 2).unwrap();
        assert!(none.rate.abs() < 0.02, "{}", none.rate);
        let full = build_operator(OperatorTag::Conjugated, 401, 12.0, &params(), &fam).unwrap();
        let fit = propagator_decay_check(&full, &full.weighted_modes(3), 10.0, 20, 3).unwrap();
        assert!(fit.rate >= 0.38, "{fit:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10))]

        #[test]
        fn nonnegative_potential_raises_spectrum(seed in 0u64..10_000) {
            let fam = build_chi(0.25).unwrap();
            let op = build_operator(OperatorTag::BareConjugated, 81, 8.0, &params(), &fam).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pot: Vec<f64> = (0..81).map(|_| rng.random_range(0.0..2.0)).collect();
            let base = op.eigenvalues().unwrap();
            let raised = op.with_potential(&pot).eigenvalues().unwrap();
            for (a, b) in base.iter().zip(&raised) {
                prop_assert!(*b >= *a - 1e-10);
            }
        }

        #[test]
        fn split_reconstructs_and_high_part_has_gap(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = Grid::new(1, 9, 8.0, 16).unwrap();
            let vals: Vec<f64> = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let f = GraphField::raw(&g, vals.clone(), FieldRole::Remainder);
            let s = theta_split(&f);
            let err = s.reconstruct().iter().zip(&vals).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            prop_assert!(err <= 1e-12);
            for k in 0..g.n_y_nodes() {
                let col = &s.high.values()[k * 16..(k + 1) * 16];
                let t = Trig::new(col);
                prop_assert!(t.coef[0].0.abs() < 1e-12 && t.coef[1].0.abs() < 1e-12 && t.coef[1].1.abs() < 1e-12);
                let d1 = theta_l2(col, 1, 2);
                let d0 = theta_l2(col, 0, 2);
                prop_assert!(d1 * d1 >= 4.0 * d0 * d0 - 1e-12);
            }
        }
    }
}

//! Weighted-norm diagnostics of a run: controlling functionals `M₁..M₄` (running maxima),
//! pointwise functionals `Φ₁, Φ₂, Φ₃` and the Gaussian-weighted `L²` norm of `χ_Ω w`.

use alloc::vec::Vec;

use crate::cutoff::{chi_scaled, CutoffFamily};
use crate::error::Result;
use crate::geometry::multi_indices_of_order;
use crate::grid::{Closure, FieldRole, GraphField};
use crate::profile::{OdeResidual, ProfileParams};
use crate::spectral::{theta_l2, theta_split, ThetaSplit};

/// `χ_Ω f`.
pub fn chi_times(f: &GraphField, family: &CutoffFamily, omega: f64) -> GraphField {
    let g = f.grid();
    let nt = g.n_theta();
    let d = g.dim();
    let mut out = f.values().to_vec();
    for k in 0..g.n_y_nodes() {
        let chi = chi_scaled(family, omega, &g.y_coords(k)[..d]).value;
        out[k * nt..(k + 1) * nt].iter_mut().for_each(|v| *v *= chi);
    }
    GraphField::raw(g, out, f.role())
}

fn derivative(f: &GraphField, multi: &[usize], l: usize) -> Result<GraphField> {
    let v = f.grid().derivative(f.values(), multi, l, Closure::OneSided)?;
    Ok(GraphField::raw(f.grid(), v, FieldRole::Remainder))
}

fn unit(d: usize, k: usize) -> Vec<usize> {
    let mut m = alloc::vec![0; d];
    m[k] = 1;
    m
}

/// Per-node `|w₀| + 2|w₁|` of a collection of split fields, Euclidean across the collection.
fn low_modes(splits: &[ThetaSplit], k: usize) -> f64 {
    let s0: f64 = splits.iter().map(|s| s.w0[k] * s.w0[k]).sum();
    let s1: f64 = splits.iter().map(|s| s.w1_abs(k) * s.w1_abs(k)).sum();
    libm::sqrt(s0) + 2.0 * libm::sqrt(s1)
}

fn pm1_modes(splits: &[ThetaSplit], k: usize) -> f64 {
    let s1: f64 = splits.iter().map(|s| s.w1_abs(k) * s.w1_abs(k)).sum();
    2.0 * libm::sqrt(s1)
}

/// `‖∂_θ^l P_{θ≥m}·‖_{L²_θ}` at y-node `k`, Euclidean across the collection.
fn high_norm(fields: &[GraphField], k: usize, l: u32, m: usize) -> f64 {
    let nt = fields[0].grid().n_theta();
    let s: f64 = fields
        .iter()
        .map(|f| {
            let v = theta_l2(&f.values()[k * nt..(k + 1) * nt], l, m);
            v * v
        })
        .sum();
    libm::sqrt(s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MFunctionals {
    pub instantaneous: [f64; 4],
    pub running: [f64; 4],
}

/// `M₁..M₄` from `χ_Ω w`, updated against the previous running maxima.
pub fn m_functionals(
    chi_w: &GraphField,
    omega: f64,
    kappa: f64,
    tau: f64,
    previous: [f64; 4],
) -> Result<MFunctionals> {
    chi_w.check_finite("m_functionals")?;
    let g = chi_w.grid();
    let d = g.dim();
    let n = g.n_y_nodes();
    let bracket = |y2: f64, p: f64| libm::pow(1.0 + y2, -0.5 * p);
    let hundred = |y2: f64, p: f64| libm::pow(100.0 + y2, -p);

    let base = [theta_split(chi_w)];
    let grads: Vec<GraphField> =
        (0..d).map(|k| derivative(chi_w, &unit(d, k), 0)).collect::<Result<_>>()?;
    let grad_splits: Vec<ThetaSplit> = grads.iter().map(theta_split).collect();
    let hess: Vec<GraphField> = multi_indices_of_order(d, 2)
        .iter()
        .map(|m| derivative(chi_w, m, 0))
        .collect::<Result<_>>()?;
    let hess_splits: Vec<ThetaSplit> = hess.iter().map(theta_split).collect();
    let own = core::slice::from_ref(chi_w);

    let (mut s1, mut h1, mut s2, mut h2, mut s4, mut h4) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut s3 = alloc::vec![0.0f64; hess.len()];
    let mut h3 = alloc::vec![0.0f64; hess.len()];
    for k in 0..n {
        let y2 = g.y_norm2(k);
        s1 = s1.max(bracket(y2, 3.0) * low_modes(&base, k));
        let theta3 = high_norm(own, k, 3, 2);
        h1 = h1.max(hundred(y2, 1.5) * theta3);
        s2 = s2.max(bracket(y2, 2.0) * low_modes(&grad_splits, k));
        h2 = h2.max(hundred(y2, 1.0) * high_norm(&grads, k, 2, 2));
        for (i, (hs, hf)) in hess_splits.iter().zip(&hess).enumerate() {
            s3[i] = s3[i].max(bracket(y2, 1.0) * low_modes(core::slice::from_ref(hs), k));
            h3[i] = h3[i].max(hundred(y2, 0.5) * high_norm(core::slice::from_ref(hf), k, 1, 1));
        }
        s4 = s4.max(bracket(y2, 2.0) * pm1_modes(&base, k));
        h4 = h4.max(hundred(y2, 1.0) * theta3);
    }
    let o4 = libm::pow(omega, -4.0);
    let inst = [
        (s1 + h1) / (kappa * o4 + 1.0 / (tau * tau)),
        omega * omega * omega / kappa * (s2 + h2),
        omega * omega / kappa * s3.iter().zip(&h3).map(|(a, b)| a + b).sum::<f64>(),
        omega * omega * omega / kappa * (s4 + h4),
    ];
    let mut running = previous;
    for (r, i) in running.iter_mut().zip(inst) {
        *r = r.max(i);
    }
    Ok(MFunctionals { instantaneous: inst, running })
}

/// `(Φ₁, Φ₂, Φ₃)`, each a supremum over `y`.
pub fn phi_functionals(v: &GraphField, omega: f64, family: &CutoffFamily) -> Result<[f64; 3]> {
    v.check_finite("phi_functionals")?;
    let g = v.grid();
    let d = g.dim();
    let cv = chi_times(v, family, omega);
    let grads: Vec<GraphField> = (0..d).map(|k| derivative(&cv, &unit(d, k), 0)).collect::<Result<_>>()?;
    let hess: Vec<GraphField> = multi_indices_of_order(d, 2)
        .iter()
        .map(|m| derivative(&cv, m, 0))
        .collect::<Result<_>>()?;
    let mut phi = [0.0f64; 3];
    for k in 0..g.n_y_nodes() {
        let w = 100.0 + g.y_norm2(k);
        for h in &hess {
            let n = high_norm(core::slice::from_ref(h), k, 1, 1);
            phi[0] = phi[0].max(n * n / w);
        }
        let n = high_norm(&grads, k, 2, 2);
        phi[1] = phi[1].max(n * n / (w * w));
        let n = high_norm(core::slice::from_ref(&cv), k, 3, 2);
        phi[2] = phi[2].max(n * n / (w * w * w));
    }
    Ok(phi)
}

/// `Σ_{|k|+l≤2} ‖e^{−|y|²/8} ∇^k ∂_θ^l (χ_Ω w)‖₂` over `y` and `θ`.
pub fn weighted_l2(w: &GraphField, family: &CutoffFamily, omega: f64) -> Result<f64> {
    w.check_finite("weighted_l2")?;
    let g = w.grid();
    let d = g.dim();
    let nt = g.n_theta();
    let cw = chi_times(w, family, omega);
    let weights: Vec<f64> = (0..g.n_y_nodes())
        .map(|k| g.y_weight(k) * g.h_theta() * libm::exp(-0.25 * g.y_norm2(k)))
        .collect();
    let mut total = 0.0;
    for l in 0..=2usize {
        for order in 0..=(2 - l) {
            for m in multi_indices_of_order(d, order) {
                let f = g.derivative(cw.values(), &m, l, Closure::OneSided)?;
                let s: f64 = f
                    .chunks_exact(nt)
                    .zip(&weights)
                    .map(|(col, wk)| wk * col.iter().map(|x| x * x).sum::<f64>())
                    .sum();
                total += libm::sqrt(s);
            }
        }
    }
    Ok(total)
}

/// One row of the monitor series.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorRecord {
    pub tau: f64,
    pub omega: f64,
    pub params: ProfileParams,
    pub fit_residual: f64,
    pub m_instant: [f64; 4],
    pub m: [f64; 4],
    pub phi: [f64; 3],
    pub weighted_l2: f64,
    /// `sup_{|y|≤√τ} |v − √(2 + yᵀB̃y/τ)|` with `B̃` the rounded classification of `τB`.
    pub profile_deviation: f64,
    pub ode: Option<OdeResidual>,
}

impl MonitorRecord {
    pub fn is_finite_nonnegative(&self) -> bool {
        let vals = self
            .m_instant
            .iter()
            .chain(&self.m)
            .chain(&self.phi)
            .chain([&self.weighted_l2, &self.profile_deviation, &self.fit_residual]);
        vals.into_iter().all(|v| v.is_finite() && *v >= 0.0)
    }
}

/// Append-only series; `M_k` running maxima are carried forward.
#[derive(Debug, Clone, Default)]
pub struct MonitorSeries {
    pub records: Vec<MonitorRecord>,
}

impl MonitorSeries {
    pub fn running(&self) -> [f64; 4] {
        self.records.last().map(|r| r.m).unwrap_or([0.0; 4])
    }

    pub fn push(&mut self, r: MonitorRecord) {
        self.records.push(r);
    }

    /// Attaches ODE residuals computed from the parameter series.
    pub fn attach_ode_residuals(&mut self) -> Result<()> {
        let series: Vec<(f64, ProfileParams)> = self.records.iter().map(|r| (r.tau, r.params)).collect();
        let res = crate::profile::ode_residuals(&series)?;
        for (r, o) in self.records.iter_mut().zip(res) {
            r.ode = Some(o);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cutoff::build_chi;
    use crate::grid::Grid;
    use approx::assert_abs_diff_eq;
    use core::f64::consts::{PI, SQRT_2};

    #[test]
    fn zero_remainder_keeps_previous_maxima() {
        let g = Grid::new(2, 21, 10.0, 16).unwrap();
        let w = GraphField::raw(&g, alloc::vec![0.0; g.len()], FieldRole::Remainder);
        let prev = [1.0, 2.0, 3.0, 4.0];
        let m = m_functionals(&w, 20.0, 5.0, 30.0, prev).unwrap();
        assert_eq!(m.instantaneous, [0.0; 4]);
        assert_eq!(m.running, prev);
    }

    #[test]
    fn m1_of_theta_independent_bump() {
        let g = Grid::new(1, 161, 10.0, 16).unwrap();
        let c = 0.01;
        let f = |y: f64| c * libm::pow(1.0 + y * y, 1.5) * libm::exp(-y * y / 2.0);
        let w = GraphField::from_fn(&g, FieldRole::Remainder, |y, _| f(y[0])).unwrap();
        let (omega, kappa, tau) = (20.0, 7.0, 30.0);
        let m = m_functionals(&w, omega, kappa, tau, [0.0; 4]).unwrap();
        // ⟨y⟩⁻³ f = c e^{−y²/2}, maximal at y = 0.
        let want = c / (kappa * libm::pow(omega, -4.0) + 1.0 / (tau * tau));
        assert_abs_diff_eq!(m.instantaneous[0], want, epsilon = 1e-12 * want);
        assert!(m.instantaneous[3] < 1e-12 * want);
        let m2 = m_functionals(&w, omega, kappa, tau, [0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(m2.running[3], 1.0);
    }

    #[test]
    fn phi_examples() {
        let fam = build_chi(0.25).unwrap();
        let g = Grid::new(2, 41, 6.0, 16).unwrap();
        let v = GraphField::from_fn(&g, FieldRole::Rescaled, |_, _| SQRT_2 + 0.1).unwrap();
        assert!(phi_functionals(&v, 4.0, &fam).unwrap().iter().all(|&p| p < 1e-25));
        let v = GraphField::from_fn(&g, FieldRole::Rescaled, |y, t| {
            SQRT_2 + 1e-3 * libm::cos(2.0 * t) * libm::exp(-(y[0] * y[0] + y[1] * y[1]))
        })
        .unwrap();
        let phi = phi_functionals(&v, 4.0, &fam).unwrap();
        assert_abs_diff_eq!(phi[2], 64.0 * 1e-6 * PI / 1e6, epsilon = 1e-10);
        let far = GraphField::from_fn(&g, FieldRole::Rescaled, |y, t| {
            if y[0].abs() >= 5.5 { SQRT_2 + 0.1 * libm::cos(3.0 * t) } else { SQRT_2 }
        })
        .unwrap();
        assert!(phi_functionals(&far, 4.0, &fam).unwrap()[2] < 1e-25);
    }

    #[test]
    fn weighted_l2_of_gaussian() {
        let fam = build_chi(0.25).unwrap();
        let g = Grid::new(1, 1601, 12.0, 8).unwrap();
        let w = GraphField::from_fn(&g, FieldRole::Remainder, |y, _| libm::exp(-y[0] * y[0])).unwrap();
        let al = 2.25;
        let base = libm::sqrt(PI / al);
        let i0 = base;
        let i1 = 4.0 * base / (2.0 * al);
        let i2 = base * (16.0 * 3.0 / (4.0 * al * al) - 16.0 / (2.0 * al) + 4.0);
        let want = libm::sqrt(2.0 * PI) * (libm::sqrt(i0) + libm::sqrt(i1) + libm::sqrt(i2));
        let got = weighted_l2(&w, &fam, 9.0).unwrap();
        assert_abs_diff_eq!(got, want, epsilon = 1e-6);
        let w2 = w.map(FieldRole::Remainder, |x| 2.0 * x);
        assert_abs_diff_eq!(weighted_l2(&w2, &fam, 9.0).unwrap(), 2.0 * got, epsilon = 1e-12);
        let z = w.map(FieldRole::Remainder, |_| 0.0);
        assert_eq!(weighted_l2(&z, &fam, 9.0).unwrap(), 0.0);
    }
}

//! Modulated rescaled runs and the unrescaled continuation to the pinch.
//!
//! The rescaled flow has exponentially unstable directions: a shift of the blow-up time
//! (`a − ½ − ½ tr B`) and translations of the axis (`α₁, α₂`). After each fit the run
//! re-anchors `T` so that `a = ½ + ½ tr B` and moves the axis to the fitted centre.

use alloc::boxed::Box;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::cutoff::{build_chi, CutoffFamily};
use crate::error::{structural, Result};
use crate::geometry::{mean_curvature, mcf_rhs_with, window_nodes};
use crate::grid::{FieldRole, GraphField, Grid};
use crate::monitors::{chi_times, m_functionals, phi_functionals, weighted_l2, MonitorRecord, MonitorSeries};
use crate::profile::{fit, ProfileParams};
use crate::rescaled::{advance, omega, step, FlowState, StepControls, StepStatus};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub xi0: f64,
    pub tau_end: f64,
    /// Fit and record cadence in `τ`.
    pub fit_every: f64,
    /// Cutoff parameter `ε`.
    pub eps: f64,
    pub controls: StepControls,
    /// Re-anchor `T` and recentre the axis after each fit.
    pub modulate: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            xi0: 20.0,
            tau_end: 60.0,
            fit_every: 0.1,
            eps: 0.25,
            controls: StepControls::default(),
            modulate: true,
        }
    }
}

/// `v₀ = √(2 + Σ b_k y_k²/ξ₀) + δ e^{−|y|²} cos θ`.
pub fn neck_initial(grid: &Arc<Grid>, xi0: f64, b: &[f64], delta: f64) -> Result<GraphField> {
    let d = grid.dim();
    if b.len() != d {
        return Err(structural("one profile coefficient per y-axis is required"));
    }
    GraphField::from_fn(grid, FieldRole::Rescaled, |y, t| {
        let q: f64 = (0..d).map(|k| b[k] * y[k] * y[k]).sum::<f64>() / xi0;
        let r2: f64 = y.iter().map(|c| c * c).sum();
        libm::sqrt(2.0 + q) + delta * libm::exp(-r2) * libm::cos(t)
    })
}

/// Outer profile `V_{1/2, diag(b)/ξ₀}` matching [`neck_initial`].
pub fn neck_outer(dim: usize, xi0: f64, b: &[f64]) -> ProfileParams {
    let diag: Vec<f64> = b.iter().map(|v| v / xi0).collect();
    ProfileParams::with_diag(dim, 0.5, &diag)
}

/// `B̃ = R diag(c) Rᵀ` with `c` the `{0, 1}` classification of `τB`.
pub fn rounded_b(p: &ProfileParams, tau: f64) -> [[f64; 3]; 3] {
    let rot = p.rotation();
    let (_, class) = p.classify(tau);
    let d = p.dim;
    let mut out = [[0.0; 3]; 3];
    for i in 0..d {
        for j in 0..d {
            out[i][j] = (0..d).map(|k| rot.rotation[i][k] * class[k] as f64 * rot.rotation[j][k]).sum();
        }
    }
    out
}

/// `sup_{|y| ≤ √τ} |v − √(2 + yᵀB̃y/τ)|`.
pub fn profile_deviation(v: &GraphField, b_tilde: &[[f64; 3]; 3], tau: f64) -> f64 {
    let g = v.grid();
    let nt = g.n_theta();
    let d = g.dim();
    let mut dev: f64 = 0.0;
    for k in 0..g.n_y_nodes() {
        if g.y_norm2(k) > tau {
            continue;
        }
        let y = g.y_coords(k);
        let mut q = 0.0;
        for i in 0..d {
            for j in 0..d {
                q += b_tilde[i][j] * y[i] * y[j];
            }
        }
        let target = libm::sqrt(2.0 + q / tau);
        for &x in &v.values()[k * nt..(k + 1) * nt] {
            dev = dev.max((x - target).abs());
        }
    }
    dev
}

pub type Observer<'a> = Box<dyn FnMut(&FlowState, &MonitorRecord) -> Result<()> + 'a>;

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub state: FlowState,
    pub series: MonitorSeries,
    pub family: CutoffFamily,
}

/// Fits, records and (optionally) modulates the state at its current time.
fn record(
    state: &mut FlowState,
    cfg: &RunConfig,
    family: &CutoffFamily,
    guess: &mut ProfileParams,
    series: &mut MonitorSeries,
) -> Result<MonitorRecord> {
    let tau = state.time();
    let om = omega(tau.max(cfg.xi0), cfg.xi0)?;
    let res = fit(&state.field, om, family, guess)?;
    let p = res.params;
    let chi_w = chi_times(&res.w, family, om);
    let m = m_functionals(&chi_w, om, family.kappa(), tau, series.running())?;
    let rec = MonitorRecord {
        tau,
        omega: om,
        params: p,
        fit_residual: res.residual,
        m_instant: m.instantaneous,
        m: m.running,
        phi: phi_functionals(&state.field, om, family)?,
        weighted_l2: weighted_l2(&res.w, family, om)?,
        profile_deviation: profile_deviation(&state.field, &rounded_b(&p, tau), tau),
        ode: None,
    };
    series.push(rec.clone());
    let mut next = p;
    if cfg.modulate {
        let sigma2 = 2.0 * p.a - p.trace_b();
        if !(sigma2 > 0.0) {
            return Err(structural("re-anchoring scale 2a - tr B is not positive"));
        }
        let sigma = libm::sqrt(sigma2);
        state.reanchor(sigma)?;
        state.recenter(sigma * p.alpha1, sigma * p.alpha2)?;
        next.a = p.a / sigma2;
        for row in next.b.iter_mut() {
            row.iter_mut().for_each(|b| *b /= sigma2);
        }
        next.alpha1 = 0.0;
        next.alpha2 = 0.0;
    }
    let mut outer = ProfileParams::cylinder(p.dim);
    outer.a = next.a;
    outer.b = next.b;
    state.outer = outer;
    *guess = next;
    Ok(rec)
}

/// Rescaled run from `τ = ξ₀` to `cfg.tau_end` with fits every `cfg.fit_every`.
pub fn modulated_run(
    v0: GraphField,
    outer: ProfileParams,
    cfg: &RunConfig,
    mut observer: Option<Observer<'_>>,
) -> Result<RunOutput> {
    let family = build_chi(cfg.eps)?;
    let mut state = FlowState::rescaled(v0, cfg.xi0, cfg.xi0, outer)?;
    state.apply_outer(cfg.controls.eps)?;
    let mut guess = outer;
    let mut series = MonitorSeries::default();
    loop {
        let rec = record(&mut state, cfg, &family, &mut guess, &mut series)?;
        if let Some(obs) = observer.as_mut() {
            obs(&state, &rec)?;
        }
        if rec.tau >= cfg.tau_end - 1e-9 {
            break;
        }
        let target = (state.time() + cfg.fit_every).min(cfg.tau_end.max(state.time()));
        advance(&mut state, &cfg.controls, target)?;
    }
    if series.records.len() >= 5 {
        series.attach_ode_residuals()?;
    }
    Ok(RunOutput { state, series, family })
}

/// One sample of an unrescaled run on the window `|z| ≤ r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinchSample {
    pub t: f64,
    pub min_u: f64,
    /// Smallest mean curvature on the window.
    pub min_h: f64,
    /// Largest `∂_t u` on the window.
    pub max_ut: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinchConfig {
    /// Stop once `min u` is at or below this.
    pub stop_min: f64,
    pub window: f64,
    pub controls: StepControls,
}

impl Default for PinchConfig {
    fn default() -> Self {
        PinchConfig { stop_min: 0.05, window: 0.5, controls: StepControls::default() }
    }
}

fn pinch_sample(u: &FlowState, nodes: &[usize], c: &StepControls) -> Result<PinchSample> {
    let nt = u.grid().n_theta();
    let h = mean_curvature(&u.field)?;
    let ut = mcf_rhs_with(&u.field, c.closure)?;
    let mut min_h = f64::INFINITY;
    let mut max_ut = f64::NEG_INFINITY;
    for &k in nodes {
        for p in k * nt..(k + 1) * nt {
            min_h = min_h.min(h.values()[p]);
            max_ut = max_ut.max(ut.values()[p]);
        }
    }
    Ok(PinchSample { t: u.time(), min_u: u.field.min().0, min_h, max_ut })
}

/// Evolves an unrescaled state until `min u ≤ stop_min`, sampling every step.
pub fn pinch_run(mut u: FlowState, cfg: &PinchConfig) -> Result<(FlowState, Vec<PinchSample>)> {
    let nodes = window_nodes(u.grid(), cfg.window);
    let mut samples = Vec::new();
    loop {
        samples.push(pinch_sample(&u, &nodes, &cfg.controls)?);
        if u.field.min().0 <= cfg.stop_min {
            break;
        }
        if step(&mut u, &cfg.controls)? == StepStatus::BlowUp {
            break;
        }
    }
    Ok((u, samples))
}

/// Samples from the final `fraction` of the time span.
pub fn tail(samples: &[PinchSample], fraction: f64) -> &[PinchSample] {
    let (Some(first), Some(last)) = (samples.first(), samples.last()) else { return samples };
    let start = last.t - fraction * (last.t - first.t);
    let i = samples.iter().position(|s| s.t >= start).unwrap_or(samples.len());
    &samples[i..]
}

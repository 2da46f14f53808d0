//! Rescaled flow `v(y, θ, τ) = u(z, θ, t)/√(T − t)`, `y = z/√(T − t)`, `τ = −ln(T − t)`,
//! explicit RK4 stepping of both flows, the growing domain `Ω(τ)` and zoom flows.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{domain, structural, Error, Result};
use crate::geometry::{speed_at, Derivs};
use crate::grid::{Axis, Closure, FieldRole, GraphField, Grid};
use crate::interp::{sample_columns, Trig};
use crate::profile::{profile_value, ProfileParams};

/// `∂_τ v = Δv + v⁻²∂_θ²v − ½ y·∇v + ½ v − 1/v + N₁(v)`.
///
/// Diffusion closes with quadratic ghost extrapolation, the outflow drift with upwind
/// differences on the outermost rings.
pub fn rescaled_rhs(v: &GraphField) -> Result<GraphField> {
    v.check_finite("rescaled_rhs")?;
    v.check_positive()?;
    let g = v.grid();
    let dv = Derivs::new(v, Closure::QuadGhost);
    let drift: Vec<Vec<f64>> =
        (0..g.dim()).map(|k| g.y_derivative(v.values(), k, 1, Closure::Upwind)).collect();
    let nt = g.n_theta();
    let mut out = Vec::with_capacity(v.values().len());
    for (p, &vp) in v.values().iter().enumerate() {
        let y = g.y_coords(p / nt);
        let adv: f64 = (0..g.dim()).map(|k| y[k] * drift[k][p]).sum();
        out.push(speed_at(vp, &dv, p) - 0.5 * adv + 0.5 * vp);
    }
    Ok(GraphField::raw(g, out, FieldRole::Remainder))
}

/// `Ω(τ) = √(100 ln τ + 9 (τ − ξ₀)^{11/10})`.
pub fn omega(tau: f64, xi0: f64) -> Result<f64> {
    if !(xi0 > 1.0) || !(tau >= xi0) {
        return Err(domain(format!("omega needs tau >= xi0 > 1, got tau = {tau}, xi0 = {xi0}")));
    }
    Ok(libm::sqrt(100.0 * libm::log(tau) + 9.0 * libm::pow(tau - xi0, 1.1)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    /// Original flow at time `t`, with an optional blow-up time guess.
    Unrescaled { t: f64, t_blowup: Option<f64> },
    Rescaled { tau: f64, xi0: f64 },
}

#[derive(Debug, Clone)]
pub struct FlowState {
    pub field: GraphField,
    pub mode: Mode,
    /// `Ω(τ)` in rescaled mode, the grid extent otherwise.
    pub active_radius: f64,
    pub steps: u64,
    pub last_dt: f64,
    /// Profile held on rescaled nodes outside `(1 + ε)Ω(τ)`.
    pub outer: ProfileParams,
}

impl FlowState {
    pub fn unrescaled(field: GraphField, t: f64, t_blowup: Option<f64>) -> Result<Self> {
        if let Some(tb) = t_blowup {
            if !(t < tb) {
                return Err(domain(format!("unrescaled state needs t < T, got t = {t}, T = {tb}")));
            }
        }
        field.check_finite("initial field")?;
        field.check_positive()?;
        let radius = field.grid().y_max();
        let dim = field.grid().dim();
        Ok(FlowState {
            field,
            mode: Mode::Unrescaled { t, t_blowup },
            active_radius: radius,
            steps: 0,
            last_dt: 0.0,
            outer: ProfileParams::cylinder(dim),
        })
    }

    pub fn rescaled(field: GraphField, tau: f64, xi0: f64, outer: ProfileParams) -> Result<Self> {
        field.check_finite("initial field")?;
        field.check_positive()?;
        if outer.dim != field.grid().dim() {
            return Err(structural("outer profile dimension differs from the grid"));
        }
        let field = field.with_role(FieldRole::Rescaled);
        Ok(FlowState {
            field,
            mode: Mode::Rescaled { tau, xi0 },
            active_radius: omega(tau, xi0)?,
            steps: 0,
            last_dt: 0.0,
            outer,
        })
    }

    /// `t` or `τ`.
    pub fn time(&self) -> f64 {
        match self.mode {
            Mode::Unrescaled { t, .. } => t,
            Mode::Rescaled { tau, .. } => tau,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.field.grid()
    }

    fn set_time(&mut self, time: f64) -> Result<()> {
        match &mut self.mode {
            Mode::Unrescaled { t, .. } => *t = time,
            Mode::Rescaled { tau, xi0 } => {
                *tau = time;
                self.active_radius = omega(time.max(*xi0), *xi0)?;
            }
        }
        Ok(())
    }

    /// Nodes evolved by the rescaled stepper: `|y| ≤ (1 + ε)Ω(τ)`.
    fn active_mask(&self, eps: f64) -> Option<Vec<bool>> {
        match self.mode {
            Mode::Unrescaled { .. } => None,
            Mode::Rescaled { .. } => {
                let g = self.grid();
                let r = (1.0 + eps) * self.active_radius;
                let mask: Vec<bool> = (0..g.n_y_nodes()).map(|k| g.y_norm2(k) <= r * r).collect();
                if mask.iter().all(|&m| m) { None } else { Some(mask) }
            }
        }
    }

    /// Overwrites inactive nodes with the outer profile.
    pub fn apply_outer(&mut self, eps: f64) -> Result<()> {
        let Some(mask) = self.active_mask(eps) else { return Ok(()) };
        let g = self.grid().clone();
        let nt = g.n_theta();
        let d = g.dim();
        for (k, active) in mask.iter().enumerate() {
            if *active {
                continue;
            }
            let y = g.y_coords(k);
            let val = profile_value(self.outer.a, &self.outer.b, &y[..d])?;
            self.field.values_mut()[k * nt..(k + 1) * nt].iter_mut().for_each(|v| *v = val);
        }
        Ok(())
    }

    /// Replaces `T` by `T'` with `(T − t)/(T' − t) = σ²`: `v'(y) = σ v(y/σ)`, `τ' = τ + 2 ln σ`.
    pub fn reanchor(&mut self, sigma: f64) -> Result<()> {
        let Mode::Rescaled { tau, .. } = self.mode else {
            return Err(structural("reanchor applies to rescaled states"));
        };
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(domain(format!("reanchor scale {sigma} must be positive")));
        }
        let g = self.grid().clone();
        let values = resample(&self.field, &g, |y| y.map(|c| c / sigma), sigma);
        self.field = GraphField::new(&g, values, FieldRole::Rescaled)?;
        let s2 = sigma * sigma;
        self.outer.a /= s2;
        for row in self.outer.b.iter_mut() {
            row.iter_mut().for_each(|b| *b /= s2);
        }
        self.set_time(tau + 2.0 * libm::log(sigma))
    }

    /// Moves the axis to the point `(c₁, c₂)` of the cross-section plane, re-parametrizing
    /// each cross-section in polar form about it.
    pub fn recenter(&mut self, c1: f64, c2: f64) -> Result<()> {
        let g = self.grid().clone();
        let nt = g.n_theta();
        let mut out = Vec::with_capacity(g.len());
        for k in 0..g.n_y_nodes() {
            let col = &self.field.values()[k * nt..(k + 1) * nt];
            let tr = Trig::new(col);
            for j in 0..nt {
                let phi = g.theta(j);
                let (sp, cp) = libm::sincos(phi);
                // Solve −sin φ X(θ) + cos φ Y(θ) = 0 for the ray through the new centre.
                let mut th = phi;
                for _ in 0..30 {
                    let (r, dr) = tr.eval(th);
                    let (s, c) = libm::sincos(th);
                    let f = -sp * (r * c - c1) + cp * (r * s - c2);
                    let df = -sp * (dr * c - r * s) + cp * (dr * s + r * c);
                    let delta = f / df;
                    th -= delta;
                    if delta.abs() < 1e-15 {
                        break;
                    }
                }
                let (r, _) = tr.eval(th);
                let (s, c) = libm::sincos(th);
                out.push(cp * (r * c - c1) + sp * (r * s - c2));
            }
        }
        self.field = GraphField::new(&g, out, self.field.role())?;
        Ok(())
    }
}

/// `scale · f(map(y))` at every node of `target`, by cubic interpolation in `y`.
pub fn resample(
    f: &GraphField,
    target: &Arc<Grid>,
    map: impl Fn([f64; 3]) -> [f64; 3],
    scale: f64,
) -> Vec<f64> {
    let src = f.grid();
    let nt = target.n_theta();
    let mut out = vec![0.0; target.len()];
    for k in 0..target.n_y_nodes() {
        let y = map(target.y_coords(k));
        sample_columns(src, f.values(), &y, &mut out[k * nt..(k + 1) * nt]);
    }
    out.iter_mut().for_each(|v| *v *= scale);
    out
}

fn check_theta(a: &Grid, b: &Grid) -> Result<()> {
    if a.n_theta() != b.n_theta() || a.dim() != b.dim() {
        return Err(structural("grids differ in dimension or theta resolution"));
    }
    Ok(())
}

/// `v(y) = u(y√(T − t))/√(T − t)` on `target`, `τ = −ln(T − t)`.
pub fn to_rescaled(
    u: &FlowState,
    t_blowup: f64,
    xi0: f64,
    target: &Arc<Grid>,
) -> Result<FlowState> {
    let Mode::Unrescaled { t, .. } = u.mode else {
        return Err(structural("to_rescaled expects an unrescaled state"));
    };
    if !(t < t_blowup) {
        return Err(domain(format!("to_rescaled needs t < T, got t = {t}, T = {t_blowup}")));
    }
    check_theta(u.grid(), target)?;
    let l = libm::sqrt(t_blowup - t);
    let values = resample(&u.field, target, |y| y.map(|c| c * l), 1.0 / l);
    let field = GraphField::new(target, values, FieldRole::Rescaled)?;
    let tau = -libm::log(t_blowup - t);
    let mut outer = ProfileParams::cylinder(target.dim());
    outer.a = 0.5;
    let mut s = FlowState::rescaled(field, tau.max(xi0), xi0, outer)?;
    s.mode = Mode::Rescaled { tau, xi0 };
    s.steps = u.steps;
    Ok(s)
}

/// `u(z) = √(T − t) v(z/√(T − t))` on `target`, `t = T − e^{−τ}`.
pub fn from_rescaled(v: &FlowState, t_blowup: f64, target: &Arc<Grid>) -> Result<FlowState> {
    let Mode::Rescaled { tau, .. } = v.mode else {
        return Err(structural("from_rescaled expects a rescaled state"));
    };
    check_theta(v.grid(), target)?;
    let l = libm::exp(-0.5 * tau);
    let values = resample(&v.field, target, |z| z.map(|c| c / l), l);
    let field = GraphField::new(target, values, FieldRole::Unrescaled)?;
    let mut s = FlowState::unrescaled(field, t_blowup - l * l, Some(t_blowup))?;
    s.steps = v.steps;
    Ok(s)
}

/// Parameters of a zoomed flow `p(z, s) = u(λz, t₁ + λ²s)/λ` with `λ = k√(T − t₁)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoomSpec {
    pub tau1: f64,
    /// `λ/√(T − t₁)`.
    pub factor: f64,
    /// Dyadic index of a region flow, if any.
    pub n: Option<u32>,
}

impl ZoomSpec {
    /// Neck flow with `λ = √(T − t₁)`, so that `q(·, 0) = v(·, τ₁)`.
    pub fn neck(tau1: f64) -> Self {
        ZoomSpec { tau1, factor: 1.0, n: None }
    }

    /// Inner flow with `λ = τ₁^{1/20}√(T − t₁)`.
    pub fn inner(tau1: f64) -> Self {
        ZoomSpec { tau1, factor: libm::pow(tau1, 0.05), n: None }
    }

    /// Region flow with `λ_n = 2ⁿ√(T − t₁)`.
    pub fn region(tau1: f64, n: u32) -> Self {
        ZoomSpec { tau1, factor: libm::pow(2.0, n as f64), n: Some(n) }
    }

    /// Blow-up time of the zoomed flow, `(T − t₁)/λ²`.
    pub fn blowup_time(&self) -> f64 {
        1.0 / (self.factor * self.factor)
    }
}

/// Starts the zoomed unrescaled flow from a rescaled state at `τ₁`.
///
/// The new grid has extent `Y/k`, so its nodes map onto the old ones exactly.
pub fn spawn_zoom(v: &FlowState, spec: &ZoomSpec) -> Result<FlowState> {
    let Mode::Rescaled { tau, .. } = v.mode else {
        return Err(structural("spawn_zoom expects a rescaled state"));
    };
    if (tau - spec.tau1).abs() > 1e-9 * tau.abs().max(1.0) {
        return Err(structural(format!("zoom anchored at tau1 = {} but state is at tau = {tau}", spec.tau1)));
    }
    if !(spec.factor > 0.0 && spec.factor.is_finite()) {
        return Err(structural("zoom scale must be positive"));
    }
    let g = v.grid();
    let field = if spec.factor == 1.0 {
        GraphField::new(g, v.field.values().to_vec(), FieldRole::Unrescaled)?
    } else {
        let axes: Vec<Axis> =
            g.axes().iter().map(|a| Axis { n: a.n, extent: a.extent / spec.factor }).collect();
        let ng = Grid::with_axes(&axes, g.n_theta())?;
        let vals = v.field.values().iter().map(|x| x / spec.factor).collect();
        GraphField::new(&ng, vals, FieldRole::Unrescaled)?
    };
    FlowState::unrescaled(field, 0.0, Some(spec.blowup_time()))
}

/// Smallest `N ≥ 0` with `2ᴺ√2 ≥ sup`.
pub fn dyadic_index(sup: f64) -> u32 {
    let mut n = 0;
    while libm::pow(2.0, n as f64) * core::f64::consts::SQRT_2 < sup && n < 1100 {
        n += 1;
    }
    n
}

/// Dyadic index for `sup_{|y| ≤ Ω} √(2 + τ₁⁻¹ yᵀB̃y)`.
pub fn dyadic_ladder(tau1: f64, b_tilde: &ProfileParams, omega: f64) -> u32 {
    let lmax = b_tilde.rotation().eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
    dyadic_index(libm::sqrt(2.0 + lmax * omega * omega / tau1))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControls {
    pub safety: f64,
    /// Unrescaled runs stop once `min u` drops below this.
    pub pinch: f64,
    /// Active rescaled region is `|y| ≤ (1 + ε)Ω(τ)`.
    pub eps: f64,
    /// Boundary closure of the unrescaled flow.
    pub closure: Closure,
    pub dt_max: f64,
}

impl Default for StepControls {
    fn default() -> Self {
        StepControls {
            safety: 0.5,
            pinch: 1e-3,
            eps: 0.25,
            closure: Closure::QuadGhost,
            dt_max: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepStatus {
    Advanced,
    /// `min u` is below the pinch threshold; the state was not advanced.
    BlowUp,
}

/// Stable explicit step `safety / (Σ 2/h_k² + 2/(h_θ² v_min²) + Σ Y_k/(2h_k))`,
/// the drift term only in rescaled mode.
pub fn cfl_dt(state: &FlowState, c: &StepControls) -> f64 {
    let g = state.grid();
    let vmin = state.field.min().0;
    let mut rate = 2.0 / (g.h_theta() * g.h_theta() * vmin * vmin);
    for a in g.axes() {
        rate += 2.0 / (a.h() * a.h());
        if matches!(state.mode, Mode::Rescaled { .. }) {
            rate += a.extent / (2.0 * a.h());
        }
    }
    (c.safety / rate).min(c.dt_max)
}

fn rhs(state: &FlowState, field: &GraphField, c: &StepControls, mask: Option<&[bool]>) -> Result<Vec<f64>> {
    let mut r = match state.mode {
        Mode::Unrescaled { .. } => crate::geometry::mcf_rhs_with(field, c.closure)?.into_values(),
        Mode::Rescaled { .. } => rescaled_rhs(field)?.into_values(),
    };
    if let Some(mask) = mask {
        let nt = field.grid().n_theta();
        for (k, &m) in mask.iter().enumerate() {
            if !m {
                r[k * nt..(k + 1) * nt].iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
    Ok(r)
}

/// One RK4 step of size `min(cfl_dt, dt_cap)`.
pub fn step_capped(state: &mut FlowState, c: &StepControls, dt_cap: f64) -> Result<StepStatus> {
    if matches!(state.mode, Mode::Unrescaled { .. }) && state.field.min().0 < c.pinch {
        return Ok(StepStatus::BlowUp);
    }
    state.apply_outer(c.eps)?;
    let dt = cfl_dt(state, c).min(dt_cap);
    if !(dt > 0.0) {
        return Err(Error::Singular { min: state.field.min().0, node: state.field.min().1 });
    }
    let mask = state.active_mask(c.eps);
    let mask = mask.as_deref();
    let g = state.grid().clone();
    let role = state.field.role();
    let u0 = state.field.values().to_vec();
    let stage = |base: &[f64], k: &[f64], h: f64| -> Vec<f64> {
        base.iter().zip(k).map(|(b, k)| b + h * k).collect()
    };
    let k1 = rhs(state, &state.field, c, mask)?;
    let f2 = GraphField::raw(&g, stage(&u0, &k1, 0.5 * dt), role);
    let k2 = rhs(state, &f2, c, mask)?;
    let f3 = GraphField::raw(&g, stage(&u0, &k2, 0.5 * dt), role);
    let k3 = rhs(state, &f3, c, mask)?;
    let f4 = GraphField::raw(&g, stage(&u0, &k3, dt), role);
    let k4 = rhs(state, &f4, c, mask)?;
    let mut next: Vec<f64> = (0..u0.len())
        .map(|i| u0[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    drop_nyquist(&mut next, g.n_theta());
    let field = GraphField::raw(&g, next, role);
    field.check_finite("RK4 step")?;
    state.field = field;
    state.set_time(state.time() + dt)?;
    state.steps += 1;
    state.last_dt = dt;
    state.apply_outer(c.eps)?;
    Ok(StepStatus::Advanced)
}

/// Removes the `(−1)^j` component of every θ column. The θ operators annihilate it, so
/// without damping it would grow under the reaction terms.
fn drop_nyquist(values: &mut [f64], nt: usize) {
    if nt % 2 != 0 {
        return;
    }
    for col in values.chunks_exact_mut(nt) {
        let c = col.iter().enumerate().map(|(j, v)| if j % 2 == 0 { *v } else { -*v }).sum::<f64>() / nt as f64;
        col.iter_mut().enumerate().for_each(|(j, v)| *v -= if j % 2 == 0 { c } else { -c });
    }
}

pub fn step(state: &mut FlowState, c: &StepControls) -> Result<StepStatus> {
    step_capped(state, c, f64::INFINITY)
}

/// Steps until the state time reaches `until` exactly or the flow pinches.
pub fn advance(state: &mut FlowState, c: &StepControls, until: f64) -> Result<StepStatus> {
    while state.time() < until {
        let remaining = until - state.time();
        if step_capped(state, c, remaining)? == StepStatus::BlowUp {
            return Ok(StepStatus::BlowUp);
        }
        if until - state.time() < 1e-13 * until.abs().max(1.0) {
            state.set_time(until)?;
        }
    }
    Ok(StepStatus::Advanced)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use core::f64::consts::SQRT_2;
    use proptest::prelude::*;

    fn const_field(g: &Arc<Grid>, c: f64, role: FieldRole) -> GraphField {
        GraphField::from_fn(g, role, |_, _| c).unwrap()
    }

    #[test]
    fn fixed_point_and_constants() {
        let g = Grid::new(2, 21, 8.0, 16).unwrap();
        let r = rescaled_rhs(&const_field(&g, SQRT_2, FieldRole::Rescaled)).unwrap();
        assert!(r.sup_abs() <= 1e-10);
        let r = rescaled_rhs(&const_field(&g, 2.0, FieldRole::Rescaled)).unwrap();
        assert!(r.values().iter().all(|&x| (x - 0.5).abs() < 1e-15));
        let bad = GraphField::raw(&g, vec![-1.0; g.len()], FieldRole::Rescaled);
        assert!(matches!(rescaled_rhs(&bad), Err(Error::Singular { .. })));
    }

    #[test]
    fn off_centre_ripple_matches_symbolic_value() {
        // v = √2 + 0.1 cos θ at y = 0, θ = 0: Δv = 0, y·∇v = 0, so the value is the
        // graph speed of a y-independent cross-section plus ½v:
        // v_θθ/v² (1/D) − v_θ²/(D v³) − 1/v + v/2 with v_θ = 0, v_θθ = −0.1, D = 1.
        let g = Grid::new(1, 21, 8.0, 32).unwrap();
        let v = GraphField::from_fn(&g, FieldRole::Rescaled, |_, t| SQRT_2 + 0.1 * libm::cos(t)).unwrap();
        let r = rescaled_rhs(&v).unwrap();
        let v0 = SQRT_2 + 0.1;
        let expect = -0.1 / (v0 * v0) - 1.0 / v0 + 0.5 * v0;
        assert_abs_diff_eq!(r.at(g.origin_node(), 0), expect, epsilon = 1e-8);
    }

    #[test]
    fn omega_values() {
        let e = core::f64::consts::E;
        assert_abs_diff_eq!(omega(e, e).unwrap(), 10.0, epsilon = 1e-12);
        let want = libm::sqrt(100.0 * libm::log(e + 1.0) + 9.0);
        assert_abs_diff_eq!(omega(e + 1.0, e).unwrap(), want, epsilon = 1e-12);
        assert!((want - 11.846).abs() < 1e-3);
        assert!(omega(2.0, 3.0).is_err());
        assert!(omega(2.0, 0.5).is_err());
        let mut prev = 0.0;
        for i in 0..200 {
            let w = omega(20.0 + 0.37 * i as f64, 20.0).unwrap();
            assert!(w > prev);
            prev = w;
        }
    }

    #[test]
    fn cylinder_shrinks_on_schedule() {
        let g = Grid::new(1, 33, 4.0, 16).unwrap();
        let mut s = FlowState::unrescaled(const_field(&g, SQRT_2, FieldRole::Unrescaled), 0.0, None).unwrap();
        advance(&mut s, &StepControls::default(), 0.5).unwrap();
        let (m, _) = s.field.min();
        assert!((m * m - 1.0).abs() < 1e-6);
        assert_eq!(s.time(), 0.5);
    }

    #[test]
    fn fixed_point_survives_steps() {
        let g = Grid::new(1, 65, 12.0, 16).unwrap();
        let v = const_field(&g, SQRT_2, FieldRole::Rescaled);
        let mut s = FlowState::rescaled(v, 20.0, 20.0, ProfileParams::cylinder(1)).unwrap();
        for _ in 0..100 {
            step(&mut s, &StepControls::default()).unwrap();
        }
        assert!(s.field.values().iter().all(|&x| (x - SQRT_2).abs() < 1e-9));
        assert!(s.active_radius > omega(20.0, 20.0).unwrap());
    }

    #[test]
    fn steps_remove_the_nyquist_mode() {
        let g = Grid::new(1, 65, 12.0, 16).unwrap();
        let v = GraphField::from_fn(&g, FieldRole::Rescaled, |_, t| SQRT_2 + 1e-3 * libm::cos(8.0 * t)).unwrap();
        let mut s = FlowState::rescaled(v, 20.0, 20.0, ProfileParams::cylinder(1)).unwrap();
        step(&mut s, &StepControls::default()).unwrap();
        for col in s.field.values().chunks_exact(16) {
            let c: f64 = col.iter().enumerate().map(|(j, v)| if j % 2 == 0 { *v } else { -*v }).sum();
            assert!(c.abs() < 1e-13);
        }
    }

    #[test]
    fn time_variables_and_round_trip() {
        let g = Grid::new(1, 81, 4.0, 8).unwrap();
        let tb = 1.0;
        let t = 1.0 - libm::exp(-5.0);
        let u = GraphField::from_fn(&g, FieldRole::Unrescaled, |_, _| libm::sqrt(2.0 * (tb - t))).unwrap();
        let us = FlowState::unrescaled(u, t, Some(tb)).unwrap();
        let vg = Grid::new(1, 81, 4.0, 8).unwrap();
        let v = to_rescaled(&us, tb, 2.0, &vg).unwrap();
        assert_abs_diff_eq!(v.time(), 5.0, epsilon = 1e-9);
        assert!(v.field.values().iter().all(|&x| (x - SQRT_2).abs() < 1e-12));
        assert!(to_rescaled(&us, t, 2.0, &vg).is_err());
    }

    fn round_trip_error(n: usize) -> f64 {
        let f = |y: &[f64], t: f64| 1.5 + 0.3 * libm::sin(1.3 * y[0]) * libm::cos(t) + 0.2 * libm::cos(0.7 * y[0]);
        let g = Grid::new(1, n, 6.0, 8).unwrap();
        let tb = 1.0;
        let t = 1.0 - 0.2;
        let u = FlowState::unrescaled(GraphField::from_fn(&g, FieldRole::Unrescaled, f).unwrap(), t, Some(tb)).unwrap();
        // √(T − t) ≈ 0.447: rescaled extent 14 covers the source grid.
        let vg = Grid::new(1, 2 * n + 1, 14.0, 8).unwrap();
        let v = to_rescaled(&u, tb, 1.1, &vg).unwrap();
        let back = from_rescaled(&v, tb, &g).unwrap();
        assert_abs_diff_eq!(back.time(), t, epsilon = 1e-14);
        let mut err: f64 = 0.0;
        for k in 0..g.n_y_nodes() {
            for j in 0..8 {
                let y = g.y_coords(k);
                if y[0].abs() < 5.0 {
                    err = err.max((back.field.at(k, j) - f(&y, g.theta(j))).abs());
                }
            }
        }
        err
    }

    #[test]
    fn round_trip_is_fourth_order() {
        let (e1, e2) = (round_trip_error(41), round_trip_error(81));
        assert!(e1 < 1e-3, "{e1}");
        assert!(e1 / e2 > 12.0, "{e1} {e2}");
    }

    #[test]
    fn zoom_flows() {
        let g = Grid::new(1, 33, 8.0, 16).unwrap();
        let v = GraphField::from_fn(&g, FieldRole::Rescaled, |y, _| libm::sqrt(2.0 + y[0] * y[0] / 30.0)).unwrap();
        let s = FlowState::rescaled(v.clone(), 30.0, 20.0, ProfileParams::cylinder(1)).unwrap();
        let q = spawn_zoom(&s, &ZoomSpec::neck(30.0)).unwrap();
        assert_eq!(q.field.values(), v.values());
        assert!(spawn_zoom(&s, &ZoomSpec::neck(31.0)).is_err());
        let spec = ZoomSpec::inner(30.0);
        assert_abs_diff_eq!(spec.blowup_time(), libm::pow(30.0, -0.1), epsilon = 1e-15);
        let p = spawn_zoom(&s, &spec).unwrap();
        assert_abs_diff_eq!(p.grid().y_max() * spec.factor, 8.0, epsilon = 1e-12);

        let c = const_field(&g, SQRT_2, FieldRole::Rescaled);
        let s = FlowState::rescaled(c, 30.0, 20.0, ProfileParams::cylinder(1)).unwrap();
        let mut q = spawn_zoom(&s, &ZoomSpec::neck(30.0)).unwrap();
        let ctl = StepControls::default();
        while step(&mut q, &ctl).unwrap() == StepStatus::Advanced {
            let (m, _) = q.field.min();
            let err = (m - libm::sqrt(2.0 * (1.0 - q.time()))).abs();
            assert!(m < 0.1 || err < 1e-6, "{} {m} {err}", q.time());
        }
        assert!((q.time() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn dyadic_indices() {
        assert_eq!(dyadic_index(5.0 * SQRT_2), 3);
        assert_eq!(dyadic_index(SQRT_2), 0);
        assert_eq!(dyadic_index(4.0 * SQRT_2), 2);
        let b = ProfileParams::with_diag(1, 0.5, &[1.0]);
        // √(2 + Ω²/τ₁) with Ω²/τ₁ = 48 gives 5√2.
        assert_eq!(dyadic_ladder(10.0, &b, libm::sqrt(480.0)), 3);
    }

    #[test]
    fn reanchor_and_recenter() {
        let g = Grid::new(1, 121, 12.0, 32).unwrap();
        let v = GraphField::from_fn(&g, FieldRole::Rescaled, |y, _| libm::sqrt(2.0 + y[0] * y[0] / 25.0)).unwrap();
        let mut s = FlowState::rescaled(v, 25.0, 20.0, ProfileParams::with_diag(1, 0.5, &[0.04])).unwrap();
        let sigma = 1.02;
        s.reanchor(sigma).unwrap();
        assert_abs_diff_eq!(s.time(), 25.0 + 2.0 * libm::log(sigma), epsilon = 1e-14);
        let k = g.origin_node() + 10;
        let y = g.y_coords(k)[0];
        let want = sigma * libm::sqrt(2.0 + y * y / (25.0 * sigma * sigma));
        assert_abs_diff_eq!(s.field.at(k, 3), want, epsilon = 1e-7);

        // A circle of radius r centred at (c₁, c₂) becomes a round circle about it.
        let (r, c1, c2) = (1.4, 0.05, -0.03);
        let circle = GraphField::from_fn(&g, FieldRole::Rescaled, |_, t| {
            let (s, c) = libm::sincos(t);
            let b = c1 * c + c2 * s;
            b + libm::sqrt(r * r - (c1 * c1 + c2 * c2) + b * b)
        })
        .unwrap();
        let mut s = FlowState::rescaled(circle, 25.0, 20.0, ProfileParams::cylinder(1)).unwrap();
        s.recenter(c1, c2).unwrap();
        assert!(s.field.values().iter().all(|&x| (x - r).abs() < 1e-9));
    }

    #[test]
    fn outer_profile_fills_inactive_nodes() {
        let g = Grid::new(1, 161, 40.0, 8).unwrap();
        let v = const_field(&g, SQRT_2, FieldRole::Rescaled);
        let outer = ProfileParams::with_diag(1, 0.5, &[0.05]);
        let mut s = FlowState::rescaled(v, 20.0, 20.0, outer).unwrap();
        s.apply_outer(0.25).unwrap();
        let r = 1.25 * omega(20.0, 20.0).unwrap();
        for k in 0..g.n_y_nodes() {
            let y = g.y_coords(k)[0];
            let want = if y.abs() <= r { SQRT_2 } else { libm::sqrt(2.0 + 0.05 * y * y) };
            assert_eq!(s.field.at(k, 0), want);
        }
    }

    fn evolve_scaled(lambda: f64) -> (GraphField, f64) {
        let g = Grid::new(1, 41, 3.0 * lambda, 16).unwrap();
        let u = GraphField::from_fn(&g, FieldRole::Unrescaled, |y, t| {
            lambda * (1.5 + 0.2 * libm::cos(y[0] / lambda) + 0.05 * libm::cos(t))
        })
        .unwrap();
        let mut s = FlowState::unrescaled(u, 0.0, None).unwrap();
        let c = StepControls::default();
        advance(&mut s, &c, 0.05 * lambda * lambda).unwrap();
        (s.field, s.last_dt)
    }

    #[test]
    fn stepper_commutes_with_parabolic_scaling() {
        let (base, _) = evolve_scaled(1.0);
        for lambda in [0.5, 2.0] {
            let (scaled, _) = evolve_scaled(lambda);
            let diff = scaled
                .values()
                .iter()
                .zip(base.values())
                .fold(0.0f64, |m, (a, b)| m.max((a / lambda - b).abs()));
            assert!(diff < 1e-12, "{lambda}: {diff}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn cylinder_law_for_any_radius(r0 in 0.8f64..3.0) {
            let g = Grid::new(1, 17, 2.0, 16).unwrap();
            let mut s = FlowState::unrescaled(const_field(&g, r0, FieldRole::Unrescaled), 0.0, None).unwrap();
            let c = StepControls::default();
            while s.field.min().0 > 0.1 {
                step(&mut s, &c).unwrap();
                let m = s.field.min().0;
                prop_assert!((m * m - (r0 * r0 - 2.0 * s.time())).abs() < 1e-6);
            }
        }
    }
}

//! Graph mean curvature flow for hypersurfaces `(z, u cos θ, u sin θ)`, `z ∈ ℝᵈ`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{structural, Result};
use crate::grid::{Closure, FieldRole, GraphField, Grid};

/// First and second derivatives of a radius field needed by the flow equations.
pub(crate) struct Derivs {
    pub grad: Vec<Vec<f64>>,
    /// `hess[i][j]` for `i ≤ j`; entries with `i > j` are empty.
    pub hess: Vec<Vec<Vec<f64>>>,
    pub th: Vec<f64>,
    pub thth: Vec<f64>,
    pub grad_th: Vec<Vec<f64>>,
}

impl Derivs {
    pub fn new(u: &GraphField, closure: Closure) -> Self {
        let g = u.grid();
        let d = g.dim();
        let vals = u.values();
        let grad: Vec<Vec<f64>> = (0..d).map(|k| g.y_derivative(vals, k, 1, closure)).collect();
        let mut hess = vec![vec![Vec::new(); d]; d];
        for i in 0..d {
            hess[i][i] = g.y_derivative(vals, i, 2, closure);
            for j in i + 1..d {
                hess[i][j] = g.y_derivative(&grad[i], j, 1, closure);
            }
        }
        let th = g.theta_derivative(vals, 1);
        let thth = g.theta_derivative(vals, 2);
        let grad_th = grad.iter().map(|gk| g.theta_derivative(gk, 1)).collect();
        Derivs { grad, hess, th, thth, grad_th }
    }

    /// `D = 1 + |∇u|² + (u_θ/u)²` at sample `p`.
    pub fn metric(&self, u: f64, p: usize) -> f64 {
        let g2: f64 = self.grad.iter().map(|g| g[p] * g[p]).sum();
        let r = self.th[p] / u;
        1.0 + g2 + r * r
    }
}

/// Right-hand side `∂_t u` of graph mean curvature flow.
pub fn mcf_rhs(u: &GraphField) -> Result<GraphField> {
    mcf_rhs_with(u, Closure::OneSided)
}

pub fn mcf_rhs_with(u: &GraphField, closure: Closure) -> Result<GraphField> {
    u.check_finite("mcf_rhs")?;
    u.check_positive()?;
    let dv = Derivs::new(u, closure);
    let out = (0..u.values().len()).map(|p| speed_at(u.values()[p], &dv, p)).collect();
    Ok(GraphField::raw(u.grid(), out, FieldRole::Remainder))
}

pub(crate) fn speed_at(u: f64, dv: &Derivs, p: usize) -> f64 {
    let d = dv.grad.len();
    let dd = dv.metric(u, p);
    let g2: f64 = dv.grad.iter().map(|g| g[p] * g[p]).sum();
    let ut = dv.th[p];
    let mut s = 0.0;
    for k in 0..d {
        let uk = dv.grad[k][p];
        s += (dd - uk * uk) / dd * dv.hess[k][k][p];
    }
    s += (1.0 + g2) / (dd * u * u) * dv.thth[p];
    let mixed: f64 = (0..d).map(|l| dv.grad[l][p] * dv.grad_th[l][p]).sum();
    s -= 2.0 * ut / (u * u * dd) * mixed;
    s -= ut * ut / (dd * u * u * u);
    for i in 0..d {
        for j in i + 1..d {
            s -= 2.0 * dv.grad[i][p] * dv.grad[j][p] * dv.hess[i][j][p] / dd;
        }
    }
    s - 1.0 / u
}

/// Scalar mean curvature `H = −∂_t u / √D`; positive on round cylinders.
pub fn mean_curvature(u: &GraphField) -> Result<GraphField> {
    let rhs = mcf_rhs(u)?;
    let dv = Derivs::new(u, Closure::OneSided);
    let out = rhs
        .values()
        .iter()
        .zip(u.values())
        .enumerate()
        .map(|(p, (r, &uv))| -r / libm::sqrt(dv.metric(uv, p)))
        .collect();
    Ok(GraphField::raw(u.grid(), out, FieldRole::Remainder))
}

/// Outward unit normal in `ℝ^{d+2}` at y-node `k`, θ-node `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalVector(pub Vec<f64>);

impl NormalVector {
    pub fn norm(&self) -> f64 {
        libm::sqrt(self.0.iter().map(|c| c * c).sum())
    }
}

/// Outward unit normals at every sample, in sample order.
pub fn normals(u: &GraphField) -> Result<Vec<NormalVector>> {
    u.check_positive()?;
    let dv = Derivs::new(u, Closure::OneSided);
    let g = u.grid();
    let nt = g.n_theta();
    let d = g.dim();
    let mut out = Vec::with_capacity(u.values().len());
    for (p, &uv) in u.values().iter().enumerate() {
        let (s, c) = libm::sincos(g.theta(p % nt));
        let r = dv.th[p] / uv;
        let norm = libm::sqrt(dv.metric(uv, p));
        let mut n: Vec<f64> = (0..d).map(|k| -dv.grad[k][p] / norm).collect();
        n.push((c + r * s) / norm);
        n.push((s - r * c) / norm);
        out.push(NormalVector(n));
    }
    Ok(out)
}

/// Spatial and temporal window over which suprema are taken.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub radius: f64,
    pub t_start: f64,
    pub t_end: f64,
}

impl Window {
    pub fn at(radius: f64, t: f64) -> Self {
        Window { radius, t_start: t, t_end: t }
    }
}

/// One table entry: `sup u^{|m|−1} |∂_θ^n ∇^m u|`.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorEntry {
    pub multi: Vec<usize>,
    pub theta_order: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeMonitorTable {
    pub window: Window,
    pub entries: Vec<MonitorEntry>,
    /// `sup |n − n_cyl|` with `n_cyl = (0, …, 0, cos θ, sin θ)` the round-cylinder normal.
    pub normal_proximity: f64,
}

impl DerivativeMonitorTable {
    pub fn get(&self, multi: &[usize], theta_order: usize) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.multi == multi && e.theta_order == theta_order)
            .map(|e| e.value)
    }

    pub fn max_entry(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| m.max(e.value))
    }

    /// Entrywise maximum with another table over the same orders; widens the time window.
    pub fn merge(&mut self, other: &DerivativeMonitorTable) {
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            a.value = a.value.max(b.value);
        }
        self.normal_proximity = self.normal_proximity.max(other.normal_proximity);
        self.window.t_start = self.window.t_start.min(other.window.t_start);
        self.window.t_end = self.window.t_end.max(other.window.t_end);
    }
}

fn multi_indices(d: usize, total: usize) -> Vec<Vec<usize>> {
    if d == 1 {
        return vec![vec![total]];
    }
    let mut out = Vec::new();
    for first in (0..=total).rev() {
        for mut rest in multi_indices(d - 1, total - first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// All multi-indices of length `d` with `|m| = total`.
pub fn multi_indices_of_order(d: usize, total: usize) -> Vec<Vec<usize>> {
    multi_indices(d, total)
}

/// Windowed suprema of the scale-invariant quantities `u^{|m|−1}|∂_θ^n ∇^m u|`, `1 ≤ |m|+n ≤ N`.
pub fn derivative_monitors(
    u: &GraphField,
    n_max: usize,
    window: Window,
) -> Result<DerivativeMonitorTable> {
    if n_max == 0 || n_max > 4 {
        return Err(structural(format!("N_max = {n_max} not in 1..=4")));
    }
    let g = u.grid();
    if !(window.radius > 0.0) || window.radius > g.y_max() * (1.0 + 1e-12) {
        return Err(structural(format!(
            "window radius {} outside grid extent {}",
            window.radius,
            g.y_max()
        )));
    }
    u.check_positive()?;
    let nodes = window_nodes(g, window.radius);
    let nt = g.n_theta();
    let mut entries = Vec::new();
    for total in 1..=n_max {
        for y_order in (0..=total).rev() {
            let n = total - y_order;
            for multi in multi_indices(g.dim(), y_order) {
                let der = g.derivative(u.values(), &multi, n, Closure::OneSided)?;
                let mut sup: f64 = 0.0;
                for &k in &nodes {
                    for j in 0..nt {
                        let p = k * nt + j;
                        let scale = libm::pow(u.values()[p], y_order as f64 - 1.0);
                        sup = sup.max(scale * der[p].abs());
                    }
                }
                entries.push(MonitorEntry { multi, theta_order: n, value: sup });
            }
        }
    }
    let ns = normals(u)?;
    let mut prox: f64 = 0.0;
    for &k in &nodes {
        for j in 0..nt {
            let n = &ns[k * nt + j].0;
            let (s, c) = libm::sincos(g.theta(j));
            let d = n.len();
            let mut e2: f64 = n[..d - 2].iter().map(|x| x * x).sum();
            e2 += (n[d - 2] - c) * (n[d - 2] - c) + (n[d - 1] - s) * (n[d - 1] - s);
            prox = prox.max(libm::sqrt(e2));
        }
    }
    Ok(DerivativeMonitorTable { window, entries, normal_proximity: prox })
}

pub(crate) fn window_nodes(g: &Grid, radius: f64) -> Vec<usize> {
    (0..g.n_y_nodes())
        .filter(|&k| g.y_norm2(k) <= radius * radius * (1.0 + 1e-12))
        .collect()
}

//! Tensor grids in `(y, θ)`, finite differences in `y`, Fourier differentiation in `θ`
//! and Gaussian-weighted quadrature.
//!
//! Values are stored row-major over `(y₁, …, y_d, θ)` with `θ` fastest.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{structural, Error, Result};
use crate::fd::{fornberg, offset_weights};

/// One uniform axis `-extent, …, 0, …, extent` with an odd node count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub n: usize,
    pub extent: f64,
}

impl Axis {
    pub fn h(&self) -> f64 {
        2.0 * self.extent / (self.n - 1) as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.extent + i as f64 * self.h()
    }

    /// Trapezoid weight of node `i`.
    pub fn weight(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.n {
            0.5 * self.h()
        } else {
            self.h()
        }
    }
}

/// What a sampled field represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FieldRole {
    /// Radius `u(z, θ, t)` of the unrescaled flow.
    Unrescaled,
    /// Rescaled radius `v(y, θ, τ)`.
    Rescaled,
    /// Remainder `w` of the profile decomposition (may change sign).
    Remainder,
}

impl FieldRole {
    pub fn tag(self) -> &'static str {
        match self {
            FieldRole::Unrescaled => "u",
            FieldRole::Rescaled => "v",
            FieldRole::Remainder => "w",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "u" => Some(FieldRole::Unrescaled),
            "v" => Some(FieldRole::Rescaled),
            "w" => Some(FieldRole::Remainder),
            _ => None,
        }
    }

    fn is_radius(self) -> bool {
        !matches!(self, FieldRole::Remainder)
    }
}

/// How y-stencils are closed where the centered stencil leaves the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Closure {
    /// Third-order one-sided stencils.
    OneSided,
    /// Centered stencils with ghost values from quadratic extrapolation
    /// (zero third derivative). Orders 3 and 4 fall back to one-sided.
    QuadGhost,
    /// First derivative only: inward-biased 4-point differences on the two outermost
    /// rings, for outflow advection.
    Upwind,
}

#[derive(Debug, Clone)]
struct Row {
    start: usize,
    w: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Stencil {
    rows: Vec<Row>,
}

impl Stencil {
    fn build(axis: &Axis, order: usize, closure: Closure) -> Self {
        let n = axis.n;
        let h = axis.h();
        let half = if order <= 2 { 2 } else { 3 };
        let centered: Vec<i64> = (-(half as i64)..=half as i64).collect();
        let centered_w = offset_weights(0.0, &centered, order, h);
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let interior = i >= half && i + half < n;
            let upwind_ring = closure == Closure::Upwind && (i < 2 || i + 2 >= n);
            if interior && !upwind_ring {
                rows.push(Row { start: i - half, w: centered_w.clone() });
                continue;
            }
            let row = match closure {
                Closure::Upwind if order == 1 && upwind_ring => {
                    let start = if i < n / 2 { i } else { i - 3 };
                    one_sided_row(start, 4, i, order, h)
                }
                Closure::QuadGhost if order <= 2 => ghost_row(i, n, half, &centered_w),
                _ => {
                    let width = order + 3;
                    let start = if i < n / 2 { 0 } else { n - width };
                    one_sided_row(start, width, i, order, h)
                }
            };
            rows.push(row);
        }
        Stencil { rows }
    }
}

fn one_sided_row(start: usize, width: usize, i: usize, order: usize, h: f64) -> Row {
    let offsets: Vec<i64> = (0..width).map(|k| (start + k) as i64 - i as i64).collect();
    Row { start, w: offset_weights(0.0, &offsets, order, h) }
}

/// Folds ghost nodes beyond either end into the three nearest interior values.
fn ghost_row(i: usize, n: usize, half: usize, centered_w: &[f64]) -> Row {
    let mut dense = vec![0.0; n];
    for (k, &wk) in centered_w.iter().enumerate() {
        let p = i as i64 + k as i64 - half as i64;
        if p >= 0 && (p as usize) < n {
            dense[p as usize] += wk;
        } else if p < 0 {
            let e = extrapolation(p as f64, [0.0, 1.0, 2.0]);
            for (j, ej) in e.iter().enumerate() {
                dense[j] += wk * ej;
            }
        } else {
            let last = (n - 1) as f64;
            let e = extrapolation(p as f64, [last, last - 1.0, last - 2.0]);
            for (j, ej) in e.iter().enumerate() {
                dense[n - 1 - j] += wk * ej;
            }
        }
    }
    let start = dense.iter().position(|w| *w != 0.0).unwrap_or(0);
    let end = n - dense.iter().rev().position(|w| *w != 0.0).unwrap_or(0);
    Row { start, w: dense[start..end.max(start + 1)].to_vec() }
}

fn extrapolation(x: f64, nodes: [f64; 3]) -> [f64; 3] {
    let c = fornberg(x, &nodes, 0);
    [c[0][0], c[0][1], c[0][2]]
}

/// Tensor grid over `y ∈ [-Y, Y]ᵈ` and a uniform `θ` circle.
#[derive(Debug, Clone)]
pub struct Grid {
    dim: usize,
    axes: Vec<Axis>,
    n_theta: usize,
    h_theta: f64,
    /// `[closure][axis][order - 1]`.
    stencils: [Vec<Vec<Stencil>>; 3],
    /// Spectral θ-differentiation matrices for orders 1..=4, row-major `n_θ × n_θ`.
    theta_d: Vec<Vec<f64>>,
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.axes == other.axes && self.n_theta == other.n_theta
    }
}

impl Grid {
    /// Same node count and extent on every y-axis.
    pub fn new(dim: usize, n_y: usize, y_max: f64, n_theta: usize) -> Result<Arc<Self>> {
        let axes = vec![Axis { n: n_y, extent: y_max }; dim];
        Self::with_axes(&axes, n_theta)
    }

    pub fn with_axes(axes: &[Axis], n_theta: usize) -> Result<Arc<Self>> {
        let dim = axes.len();
        if !(1..=3).contains(&dim) {
            return Err(structural(format!("dimension {dim} not in 1..=3")));
        }
        if n_theta < 8 || n_theta % 2 != 0 {
            return Err(structural(format!("n_theta = {n_theta} must be even and >= 8")));
        }
        for a in axes {
            if a.n < 9 || a.n % 2 == 0 {
                return Err(structural(format!("axis node count {} must be odd and >= 9", a.n)));
            }
            if !(a.extent.is_finite() && a.extent > 0.0) {
                return Err(structural(format!("axis extent {} must be positive", a.extent)));
            }
        }
        let closures = [Closure::OneSided, Closure::QuadGhost, Closure::Upwind];
        let stencils = closures.map(|c| {
            axes.iter()
                .map(|a| (1..=4).map(|m| Stencil::build(a, m, c)).collect())
                .collect()
        });
        let theta_d = (1..=4).map(|k| theta_matrix(n_theta, k)).collect();
        Ok(Arc::new(Grid {
            dim,
            axes: axes.to_vec(),
            n_theta,
            h_theta: 2.0 * PI / n_theta as f64,
            stencils,
            theta_d,
        }))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn axis(&self, k: usize) -> &Axis {
        &self.axes[k]
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn h_theta(&self) -> f64 {
        self.h_theta
    }

    pub fn theta(&self, j: usize) -> f64 {
        j as f64 * self.h_theta
    }

    /// Number of y-nodes (product of axis counts).
    pub fn n_y_nodes(&self) -> usize {
        self.axes.iter().map(|a| a.n).product()
    }

    /// Total number of samples.
    pub fn len(&self) -> usize {
        self.n_y_nodes() * self.n_theta
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Smallest y-extent over all axes.
    pub fn y_max(&self) -> f64 {
        self.axes.iter().map(|a| a.extent).fold(f64::INFINITY, f64::min)
    }

    /// Smallest y-spacing over all axes.
    pub fn h_min(&self) -> f64 {
        self.axes.iter().map(|a| a.h()).fold(f64::INFINITY, f64::min)
    }

    /// Per-axis indices of y-node `k`.
    pub fn y_indices(&self, mut k: usize) -> [usize; 3] {
        let mut idx = [0; 3];
        for a in (0..self.dim).rev() {
            idx[a] = k % self.axes[a].n;
            k /= self.axes[a].n;
        }
        idx
    }

    /// Coordinates of y-node `k` (unused trailing slots are 0).
    pub fn y_coords(&self, k: usize) -> [f64; 3] {
        let idx = self.y_indices(k);
        let mut y = [0.0; 3];
        for a in 0..self.dim {
            y[a] = self.axes[a].coord(idx[a]);
        }
        y
    }

    pub fn y_norm2(&self, k: usize) -> f64 {
        self.y_coords(k).iter().map(|c| c * c).sum()
    }

    /// Product trapezoid weight of y-node `k`.
    pub fn y_weight(&self, k: usize) -> f64 {
        let idx = self.y_indices(k);
        (0..self.dim).map(|a| self.axes[a].weight(idx[a])).product()
    }

    /// Index of the y-node nearest to the origin.
    pub fn origin_node(&self) -> usize {
        let mut k = 0;
        for a in 0..self.dim {
            k = k * self.axes[a].n + self.axes[a].n / 2;
        }
        k
    }

    /// Distance from the origin to the closest grid face.
    pub fn outer_ring(&self, k: usize) -> usize {
        let idx = self.y_indices(k);
        (0..self.dim)
            .map(|a| idx[a].min(self.axes[a].n - 1 - idx[a]))
            .min()
            .unwrap_or(0)
    }

    /// Derivative of order `order` (1..=4) along y-axis `axis`.
    pub fn y_derivative(
        &self,
        values: &[f64],
        axis: usize,
        order: usize,
        closure: Closure,
    ) -> Vec<f64> {
        let ci = match closure {
            Closure::OneSided => 0,
            Closure::QuadGhost => 1,
            Closure::Upwind => 2,
        };
        let st = &self.stencils[ci][axis][order - 1];
        let n = self.axes[axis].n;
        let inner: usize =
            self.axes[axis + 1..].iter().map(|a| a.n).product::<usize>() * self.n_theta;
        let outer: usize = self.axes[..axis].iter().map(|a| a.n).product();
        let mut out = vec![0.0; values.len()];
        for o in 0..outer {
            let base = o * n * inner;
            for (i, row) in st.rows.iter().enumerate() {
                // Differences against the centre value keep constants exactly in the kernel.
                let centre = &values[base + i * inner..base + (i + 1) * inner];
                let dst = &mut out[base + i * inner..base + (i + 1) * inner];
                for (j, &w) in row.w.iter().enumerate() {
                    let src = base + (row.start + j) * inner;
                    for ((d, s), c) in dst.iter_mut().zip(&values[src..src + inner]).zip(centre) {
                        *d += w * (s - c);
                    }
                }
            }
        }
        out
    }

    /// Spectral θ-derivative of order `order` (0..=4).
    pub fn theta_derivative(&self, values: &[f64], order: usize) -> Vec<f64> {
        if order == 0 {
            return values.to_vec();
        }
        let m = &self.theta_d[order - 1];
        let nt = self.n_theta;
        let mut out = vec![0.0; values.len()];
        for (dst, src) in out.chunks_exact_mut(nt).zip(values.chunks_exact(nt)) {
            for (r, d) in dst.iter_mut().enumerate() {
                let row = &m[r * nt..(r + 1) * nt];
                let c = src[r];
                *d = row.iter().zip(src).map(|(a, b)| a * (b - c)).sum();
            }
        }
        out
    }

    /// Mixed derivative `∇^m ∂_θ^l` on raw values.
    pub fn derivative(
        &self,
        values: &[f64],
        multi: &[usize],
        theta_order: usize,
        closure: Closure,
    ) -> Result<Vec<f64>> {
        if multi.len() > self.dim {
            return Err(structural(format!(
                "multi-index of length {} on a {}-dimensional grid",
                multi.len(),
                self.dim
            )));
        }
        let total: usize = multi.iter().sum();
        if total > 4 || theta_order > 4 {
            return Err(structural(format!(
                "derivative orders |m| = {total}, l = {theta_order} exceed 4"
            )));
        }
        let mut cur = self.theta_derivative(values, theta_order);
        for (axis, &m) in multi.iter().enumerate() {
            if m > 0 {
                cur = self.y_derivative(&cur, axis, m, closure);
            }
        }
        Ok(cur)
    }
}

fn theta_matrix(n: usize, order: usize) -> Vec<f64> {
    let half = (n / 2) as i64;
    let mut m = vec![0.0; n * n];
    let h = 2.0 * PI / n as f64;
    for r in 0..n {
        for c in 0..n {
            let delta = (r as f64 - c as f64) * h;
            let mut s = 0.0;
            for k in 1..half {
                let kf = k as f64;
                let p = libm::pow(kf, order as f64);
                // (ik)^order e^{ikδ} + (−ik)^order e^{−ikδ}
                s += 2.0
                    * p
                    * match order % 4 {
                        0 => libm::cos(kf * delta),
                        1 => -libm::sin(kf * delta),
                        2 => -libm::cos(kf * delta),
                        _ => libm::sin(kf * delta),
                    };
            }
            m[r * n + c] = s / n as f64;
        }
    }
    m
}

/// A field sampled on every `(y, θ)` node of a [`Grid`].
#[derive(Debug, Clone)]
pub struct GraphField {
    grid: Arc<Grid>,
    values: Vec<f64>,
    role: FieldRole,
}

impl GraphField {
    pub fn new(grid: &Arc<Grid>, values: Vec<f64>, role: FieldRole) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(structural(format!(
                "value count {} does not match grid size {}",
                values.len(),
                grid.len()
            )));
        }
        let f = GraphField { grid: Arc::clone(grid), values, role };
        f.check_finite("field")?;
        if role.is_radius() {
            f.check_positive()?;
        }
        Ok(f)
    }

    /// Builds a field from `f(y, θ)`; `y` has length `d`.
    pub fn from_fn<F>(grid: &Arc<Grid>, role: FieldRole, mut f: F) -> Result<Self>
    where
        F: FnMut(&[f64], f64) -> f64,
    {
        let mut values = Vec::with_capacity(grid.len());
        for k in 0..grid.n_y_nodes() {
            let y = grid.y_coords(k);
            for j in 0..grid.n_theta {
                values.push(f(&y[..grid.dim], grid.theta(j)));
            }
        }
        Self::new(grid, values, role)
    }

    /// Wraps values without the positivity check (intermediate RK stages, derivatives).
    pub fn raw(grid: &Arc<Grid>, values: Vec<f64>, role: FieldRole) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        GraphField { grid: Arc::clone(grid), values, role }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn role(&self) -> FieldRole {
        self.role
    }

    pub fn with_role(mut self, role: FieldRole) -> Self {
        self.role = role;
        self
    }

    /// Value at y-node `k`, θ-node `j`.
    pub fn at(&self, k: usize, j: usize) -> f64 {
        self.values[k * self.grid.n_theta + j]
    }

    pub fn min(&self) -> (f64, usize) {
        self.values
            .iter()
            .enumerate()
            .fold((f64::INFINITY, 0), |acc, (i, &v)| if v < acc.0 { (v, i) } else { acc })
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what.into()))
        }
    }

    pub(crate) fn check_positive(&self) -> Result<()> {
        let (min, node) = self.min();
        if min > 0.0 {
            Ok(())
        } else {
            Err(Error::Singular { min, node })
        }
    }

    pub(crate) fn same_grid(&self, other: &GraphField) -> Result<()> {
        if Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid {
            Ok(())
        } else {
            Err(structural("fields live on different grids"))
        }
    }

    /// `∇^multi ∂_θ^theta_order f` with one-sided boundary closure.
    pub fn differentiate(&self, multi: &[usize], theta_order: usize) -> Result<GraphField> {
        self.differentiate_with(multi, theta_order, Closure::OneSided)
    }

    pub fn differentiate_with(
        &self,
        multi: &[usize],
        theta_order: usize,
        closure: Closure,
    ) -> Result<GraphField> {
        let v = self.grid.derivative(&self.values, multi, theta_order, closure)?;
        Ok(GraphField::raw(&self.grid, v, FieldRole::Remainder))
    }

    pub fn map(&self, role: FieldRole, mut f: impl FnMut(f64) -> f64) -> GraphField {
        GraphField::raw(&self.grid, self.values.iter().map(|&v| f(v)).collect(), role)
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `∫∫ e^{−|y|²/4} f g dy dθ` by the trapezoid rule.
pub fn weighted_inner(f: &GraphField, g: &GraphField) -> Result<f64> {
    f.same_grid(g)?;
    f.check_finite("weighted_inner lhs")?;
    g.check_finite("weighted_inner rhs")?;
    let grid = f.grid();
    if grid.y_max() < 8.0 {
        return Err(Error::Domain(format!(
            "weighted quadrature needs Y_max >= 8, got {}",
            grid.y_max()
        )));
    }
    let nt = grid.n_theta();
    let mut total = 0.0;
    for k in 0..grid.n_y_nodes() {
        let w = grid.y_weight(k) * libm::exp(-0.25 * grid.y_norm2(k));
        let fs = &f.values()[k * nt..(k + 1) * nt];
        let gs = &g.values()[k * nt..(k + 1) * nt];
        let s: f64 = fs.iter().zip(gs).map(|(a, b)| a * b).sum();
        total += w * s;
    }
    Ok(total * grid.h_theta())
}

/// `max_{|y| ≤ radius} ⟨y⟩^{−k} |f|` with `⟨y⟩ = (1+|y|²)^{1/2}`.
pub fn weighted_sup_norm(f: &GraphField, decay_power: u32, radius: f64) -> Result<f64> {
    if decay_power > 3 {
        return Err(structural(format!("decay power {decay_power} not in 0..=3")));
    }
    f.check_finite("weighted_sup_norm")?;
    let grid = f.grid();
    let nt = grid.n_theta();
    let mut best: f64 = 0.0;
    for k in 0..grid.n_y_nodes() {
        let r2 = grid.y_norm2(k);
        if r2 > radius * radius * (1.0 + 1e-12) {
            continue;
        }
        let w = libm::pow(1.0 + r2, -0.5 * decay_power as f64);
        for &v in &f.values()[k * nt..(k + 1) * nt] {
            best = best.max(w * v.abs());
        }
    }
    Ok(best)
}

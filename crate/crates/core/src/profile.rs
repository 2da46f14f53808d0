//! The profile `V_{a,B}(y) = √((2 + yᵀBy)/(2a))` and the decomposition
//!
//! `v = V_{a,B} + β₁·y + β₂·y cos θ + β₃·y sin θ + α₁ cos θ + α₂ sin θ + w`
//!
//! with `e^{−|y|²/8} χ_Ω w` orthogonal to the Gaussian-weighted low modes.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::cutoff::{chi_scaled, CutoffFamily};
use crate::error::{domain, structural, Error, Result};
use crate::grid::{FieldRole, GraphField, Grid};

/// Parameters of the decomposition. Slots beyond the grid dimension are zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileParams {
    pub dim: usize,
    pub a: f64,
    pub b: [[f64; 3]; 3],
    pub beta1: [f64; 3],
    pub beta2: [f64; 3],
    pub beta3: [f64; 3],
    pub alpha1: f64,
    pub alpha2: f64,
}

/// Eigen-decomposition of `B`: eigenvalues descending, columns of `rotation` are eigenvectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Rotation {
    pub eigenvalues: Vec<f64>,
    pub rotation: Vec<Vec<f64>>,
}

impl ProfileParams {
    /// The round cylinder `a = 1/2`, everything else zero.
    pub fn cylinder(dim: usize) -> Self {
        ProfileParams {
            dim,
            a: 0.5,
            b: [[0.0; 3]; 3],
            beta1: [0.0; 3],
            beta2: [0.0; 3],
            beta3: [0.0; 3],
            alpha1: 0.0,
            alpha2: 0.0,
        }
    }

    /// Cylinder with `B = diag(b)`.
    pub fn with_diag(dim: usize, a: f64, diag: &[f64]) -> Self {
        let mut p = Self::cylinder(dim);
        p.a = a;
        for (k, &v) in diag.iter().enumerate().take(dim) {
            p.b[k][k] = v;
        }
        p
    }

    pub fn unknown_count(dim: usize) -> usize {
        1 + dim * (dim + 1) / 2 + 3 * dim + 2
    }

    /// Packs `[a, B upper triangle, β₁, β₂, β₃, α₁, α₂]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let d = self.dim;
        let mut x = Vec::with_capacity(Self::unknown_count(d));
        x.push(self.a);
        for i in 0..d {
            for j in i..d {
                x.push(self.b[i][j]);
            }
        }
        for v in [&self.beta1, &self.beta2, &self.beta3] {
            x.extend_from_slice(&v[..d]);
        }
        x.push(self.alpha1);
        x.push(self.alpha2);
        x
    }

    pub fn from_vec(dim: usize, x: &[f64]) -> Self {
        let mut p = Self::cylinder(dim);
        let mut it = x.iter().copied();
        let mut next = || it.next().unwrap_or(0.0);
        p.a = next();
        for i in 0..dim {
            for j in i..dim {
                let v = next();
                p.b[i][j] = v;
                p.b[j][i] = v;
            }
        }
        for k in 0..dim {
            p.beta1[k] = next();
        }
        for k in 0..dim {
            p.beta2[k] = next();
        }
        for k in 0..dim {
            p.beta3[k] = next();
        }
        p.alpha1 = next();
        p.alpha2 = next();
        p
    }

    pub fn trace_b(&self) -> f64 {
        (0..self.dim).map(|k| self.b[k][k]).sum()
    }

    pub fn quad_form(&self, y: &[f64]) -> f64 {
        quad(&self.b, y, self.dim)
    }

    pub fn frobenius_b(&self) -> f64 {
        let d = self.dim;
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                s += self.b[i][j] * self.b[i][j];
            }
        }
        libm::sqrt(s)
    }

    /// Model `V_{a,B} + η − w` at `(y, θ)`.
    pub fn model(&self, y: &[f64], theta: f64) -> Result<f64> {
        let v = profile_value(self.a, &self.b, &y[..self.dim])?;
        let (s, c) = libm::sincos(theta);
        Ok(v + self.linear_modes(y, c, s))
    }

    fn linear_modes(&self, y: &[f64], c: f64, s: f64) -> f64 {
        let d = self.dim;
        let dot = |b: &[f64; 3]| (0..d).map(|k| b[k] * y[k]).sum::<f64>();
        dot(&self.beta1) + dot(&self.beta2) * c + dot(&self.beta3) * s + self.alpha1 * c + self.alpha2 * s
    }

    /// Symmetric eigendecomposition of `B`, eigenvalues descending, each eigenvector
    /// with its first nonzero component positive.
    pub fn rotation(&self) -> Rotation {
        let d = self.dim;
        let m = DMatrix::from_fn(d, d, |i, j| 0.5 * (self.b[i][j] + self.b[j][i]));
        let eig = SymmetricEigen::new(m);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&i, &j| {
            eig.eigenvalues[j]
                .partial_cmp(&eig.eigenvalues[i])
                .unwrap_or(core::cmp::Ordering::Equal)
        });
        let mut eigenvalues = Vec::with_capacity(d);
        let mut rotation = vec![vec![0.0; d]; d];
        for (col, &k) in order.iter().enumerate() {
            eigenvalues.push(eig.eigenvalues[k]);
            let v = eig.eigenvectors.column(k);
            let lead = v.iter().copied().find(|c| c.abs() > 1e-14).unwrap_or(1.0);
            let sign = if lead < 0.0 { -1.0 } else { 1.0 };
            for row in 0..d {
                rotation[row][col] = sign * v[row];
            }
        }
        Rotation { eigenvalues, rotation }
    }

    /// Eigenvalues of `τB` (descending) and their `{0, 1}` classification with threshold 1/2.
    pub fn classify(&self, tau: f64) -> (Vec<f64>, Vec<u8>) {
        let r = self.rotation();
        let scaled: Vec<f64> = r.eigenvalues.iter().map(|e| e * tau).collect();
        let class = scaled.iter().map(|&e| u8::from(e >= 0.5)).collect();
        (scaled, class)
    }
}

fn quad(b: &[[f64; 3]; 3], y: &[f64], d: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            s += b[i][j] * y[i] * y[j];
        }
    }
    s
}

/// `V_{a,B}(y) = √((2 + yᵀBy)/(2a))`.
pub fn profile_value(a: f64, b: &[[f64; 3]; 3], y: &[f64]) -> Result<f64> {
    let q = 2.0 + quad(b, y, y.len());
    if !(a > 0.0) || !(q > 0.0) {
        return Err(domain(format!("profile radicand (2 + yBy)/(2a) with a = {a}, 2 + yBy = {q}")));
    }
    Ok(libm::sqrt(q / (2.0 * a)))
}

/// Samples the model `V_{a,B} + η` with `w = 0`.
pub fn synthesize(grid: &alloc::sync::Arc<Grid>, p: &ProfileParams) -> Result<GraphField> {
    if p.dim != grid.dim() {
        return Err(structural("parameter and grid dimensions differ"));
    }
    let mut values = Vec::with_capacity(grid.len());
    for k in 0..grid.n_y_nodes() {
        let y = grid.y_coords(k);
        for j in 0..grid.n_theta() {
            values.push(p.model(&y, grid.theta(j))?);
        }
    }
    GraphField::new(grid, values, FieldRole::Rescaled)
}

/// Test functions paired against `χ_Ω w`, grouped by θ-mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    /// `1`, paired with the θ-mean.
    Mean,
    MeanLinear(usize),
    /// `y_k²/2 − 1`.
    MeanQuadratic(usize),
    /// `y_m y_n`, `m < n`.
    MeanCross(usize, usize),
    Cos,
    CosLinear(usize),
    Sin,
    SinLinear(usize),
}

impl Condition {
    fn weight(&self, y: &[f64]) -> f64 {
        match *self {
            Condition::Mean | Condition::Cos | Condition::Sin => 1.0,
            Condition::MeanLinear(k) | Condition::CosLinear(k) | Condition::SinLinear(k) => y[k],
            Condition::MeanQuadratic(k) => 0.5 * y[k] * y[k] - 1.0,
            Condition::MeanCross(m, n) => y[m] * y[n],
        }
    }

    fn mode(&self) -> usize {
        match self {
            Condition::Cos | Condition::CosLinear(_) => 1,
            Condition::Sin | Condition::SinLinear(_) => 2,
            _ => 0,
        }
    }

    fn theta_factor(&self, theta: f64) -> f64 {
        match self.mode() {
            1 => libm::cos(theta),
            2 => libm::sin(theta),
            _ => 1.0,
        }
    }
}

/// The orthogonality functionals for dimension `d`.
pub fn conditions(d: usize) -> Vec<Condition> {
    let mut c = vec![Condition::Mean];
    c.extend((0..d).map(Condition::MeanLinear));
    c.extend((0..d).map(Condition::MeanQuadratic));
    for m in 0..d {
        for n in m + 1..d {
            c.push(Condition::MeanCross(m, n));
        }
    }
    c.push(Condition::Cos);
    c.extend((0..d).map(Condition::CosLinear));
    c.push(Condition::Sin);
    c.extend((0..d).map(Condition::SinLinear));
    c
}

/// Output of [`fit`].
#[derive(Debug, Clone)]
pub struct DecompositionResult {
    pub params: ProfileParams,
    /// Remainder `w = v − V_{a,B} − η + w`.
    pub w: GraphField,
    /// `η = β₁·y + β₂·y cos θ + β₃·y sin θ + α₁ cos θ + α₂ sin θ + w`.
    pub eta: GraphField,
    /// Largest orthogonality pairing of `χ_Ω w`, recomputed on the full grid.
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Limit for `sup_{|y| ≤ Ω} |v/√(2 + yᵀBy) − 1|` with `B` from the initial guess.
    pub regime_limit: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { tol: 1e-10, max_iter: 50, regime_limit: 0.2 }
    }
}

/// Per-y-node data for the reduced residual.
struct Moments {
    y: Vec<[f64; 3]>,
    weight: Vec<f64>,
    /// `∫ v dθ`, `∫ v cos θ dθ`, `∫ v sin θ dθ` by the trapezoid rule.
    m: Vec<[f64; 3]>,
}

fn moments(v: &GraphField, omega: f64, family: &CutoffFamily) -> Moments {
    let g = v.grid();
    let nt = g.n_theta();
    let ht = g.h_theta();
    let trig: Vec<(f64, f64)> = (0..nt).map(|j| libm::sincos(g.theta(j))).collect();
    let mut out = Moments { y: Vec::new(), weight: Vec::new(), m: Vec::new() };
    for k in 0..g.n_y_nodes() {
        let y = g.y_coords(k);
        let chi = chi_scaled(family, omega, &y[..g.dim()]).value;
        if chi == 0.0 {
            continue;
        }
        let w = g.y_weight(k) * libm::exp(-0.25 * g.y_norm2(k)) * chi;
        let row = &v.values()[k * nt..(k + 1) * nt];
        let mut m = [0.0; 3];
        for (val, &(s, c)) in row.iter().zip(&trig) {
            m[0] += val * ht;
            m[1] += val * c * ht;
            m[2] += val * s * ht;
        }
        out.y.push(y);
        out.weight.push(w);
        out.m.push(m);
    }
    out
}

fn reduced_residual(mom: &Moments, conds: &[Condition], p: &ProfileParams) -> Vec<f64> {
    let d = p.dim;
    let mut r = vec![0.0; conds.len()];
    for ((y, &w), m) in mom.y.iter().zip(&mom.weight).zip(&mom.m) {
        let q = 2.0 + p.quad_form(y);
        if !(q > 0.0) || !(p.a > 0.0) {
            return vec![f64::INFINITY; conds.len()];
        }
        let vab = libm::sqrt(q / (2.0 * p.a));
        let dot = |b: &[f64; 3]| (0..d).map(|k| b[k] * y[k]).sum::<f64>();
        // θ-moments of the model on a uniform circle grid: cos, sin are orthogonal to 1
        // and ∫cos² = ∫sin² = π.
        let diff = [
            m[0] - 2.0 * PI * (vab + dot(&p.beta1)),
            m[1] - PI * (dot(&p.beta2) + p.alpha1),
            m[2] - PI * (dot(&p.beta3) + p.alpha2),
        ];
        for (ri, c) in r.iter_mut().zip(conds) {
            *ri += w * c.weight(y) * diff[c.mode()];
        }
    }
    r
}

fn max_abs(r: &[f64]) -> f64 {
    r.iter().fold(0.0, |m, v| if v.is_nan() { f64::INFINITY } else { m.max(v.abs()) })
}

/// Solves the orthogonality system for the parameters by damped Newton.
pub fn fit(
    v: &GraphField,
    omega: f64,
    family: &CutoffFamily,
    guess: &ProfileParams,
) -> Result<DecompositionResult> {
    fit_with(v, omega, family, guess, &FitOptions::default())
}

pub fn fit_with(
    v: &GraphField,
    omega: f64,
    family: &CutoffFamily,
    guess: &ProfileParams,
    opts: &FitOptions,
) -> Result<DecompositionResult> {
    let g = v.grid();
    let d = g.dim();
    if guess.dim != d {
        return Err(structural("guess dimension differs from the grid"));
    }
    v.check_finite("fit input")?;
    if !(omega > 0.0) || omega * (1.0 + family.eps()) > g.y_max() * (1.0 + 1e-12) {
        return Err(domain(format!(
            "cutoff support (1+eps)*Omega = {} exceeds grid extent {}",
            omega * (1.0 + family.eps()),
            g.y_max()
        )));
    }
    regime_gate(v, omega, guess, opts.regime_limit)?;

    let conds = conditions(d);
    let n = conds.len();
    debug_assert_eq!(n, ProfileParams::unknown_count(d));
    let mom = moments(v, omega, family);
    let mut x = guess.to_vec();
    let eval = |x: &[f64]| reduced_residual(&mom, &conds, &ProfileParams::from_vec(d, x));
    let mut r = eval(&x);
    let mut res = max_abs(&r);
    let mut iterations = 0;
    while res > opts.tol {
        if iterations == opts.max_iter {
            return Err(Error::FitFailure { iterations, residual: res });
        }
        iterations += 1;
        let mut jac = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let h = 1e-6 * x[j].abs().max(1e-2);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let (rp, rm) = (eval(&xp), eval(&xm));
            for i in 0..n {
                jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let rhs = DVector::from_iterator(n, r.iter().map(|v| -v));
        let step = jac
            .lu()
            .solve(&rhs)
            .ok_or(Error::FitFailure { iterations, residual: res })?;
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + lambda * s).collect();
            let rt = eval(&trial);
            let rest = max_abs(&rt);
            if rest < res || lambda < 1e-4 {
                if rest.is_finite() {
                    x = trial;
                    r = rt;
                    res = rest;
                }
                break;
            }
            lambda *= 0.5;
        }
        if !res.is_finite() {
            return Err(Error::FitFailure { iterations, residual: res });
        }
    }
    let params = ProfileParams::from_vec(d, &x);
    let (w, eta) = remainder(v, &params)?;
    let residual = orthogonality_residual(&w, omega, family)?;
    Ok(DecompositionResult { params, w, eta, residual, iterations })
}

fn regime_gate(v: &GraphField, omega: f64, guess: &ProfileParams, limit: f64) -> Result<()> {
    let g = v.grid();
    let nt = g.n_theta();
    let mut dev: f64 = 0.0;
    for k in 0..g.n_y_nodes() {
        if g.y_norm2(k) > omega * omega {
            continue;
        }
        let y = g.y_coords(k);
        let Ok(base) = profile_value(guess.a, &guess.b, &y[..g.dim()]) else {
            return Err(Error::NotInRegime { deviation: f64::INFINITY, limit });
        };
        for &val in &v.values()[k * nt..(k + 1) * nt] {
            dev = dev.max((val / base - 1.0).abs());
        }
    }
    if dev > limit {
        return Err(Error::NotInRegime { deviation: dev, limit });
    }
    Ok(())
}

/// `w = v − V_{a,B} − (linear modes)` and `η = v − V_{a,B}` on the whole grid.
pub fn remainder(v: &GraphField, p: &ProfileParams) -> Result<(GraphField, GraphField)> {
    let g = v.grid();
    let nt = g.n_theta();
    let trig: Vec<(f64, f64)> = (0..nt).map(|j| libm::sincos(g.theta(j))).collect();
    let mut w = Vec::with_capacity(g.len());
    let mut eta = Vec::with_capacity(g.len());
    for k in 0..g.n_y_nodes() {
        let y = g.y_coords(k);
        let vab = profile_value(p.a, &p.b, &y[..g.dim()])?;
        for (j, &(s, c)) in trig.iter().enumerate() {
            let e = v.values()[k * nt + j] - vab;
            eta.push(e);
            w.push(e - p.linear_modes(&y, c, s));
        }
    }
    Ok((
        GraphField::raw(g, w, FieldRole::Remainder),
        GraphField::raw(g, eta, FieldRole::Remainder),
    ))
}

/// `max_i |∫∫ e^{−|y|²/4} χ_Ω w g_i dy dθ|` by direct quadrature over every sample.
pub fn orthogonality_residual(w: &GraphField, omega: f64, family: &CutoffFamily) -> Result<f64> {
    w.check_finite("remainder")?;
    let g = w.grid();
    let conds = conditions(g.dim());
    let nt = g.n_theta();
    let mut acc = vec![0.0; conds.len()];
    for k in 0..g.n_y_nodes() {
        let y = g.y_coords(k);
        let chi = chi_scaled(family, omega, &y[..g.dim()]).value;
        if chi == 0.0 {
            continue;
        }
        let wk = g.y_weight(k) * libm::exp(-0.25 * g.y_norm2(k)) * chi * g.h_theta();
        for j in 0..nt {
            let th = g.theta(j);
            let val = w.values()[k * nt + j];
            for (a, c) in acc.iter_mut().zip(&conds) {
                *a += wk * val * c.weight(&y) * c.theta_factor(th);
            }
        }
    }
    Ok(max_abs(&acc))
}

/// Source term `F` at `y`.
pub fn source_f(
    a: f64,
    a_dot: f64,
    b: &[[f64; 3]; 3],
    b_dot: &[[f64; 3]; 3],
    y: &[f64],
) -> Result<f64> {
    let d = y.len();
    let ybq = quad(b, y, d);
    let q = 2.0 + ybq;
    if !(a > 0.0) || !(q > 0.0) {
        return Err(domain(format!("source F outside positivity domain: a = {a}, 2 + yBy = {q}")));
    }
    let mut m = [[0.0; 3]; 3];
    let mut btb = [[0.0; 3]; 3];
    for i in 0..d {
        for j in 0..d {
            let s: f64 = (0..d).map(|k| b[k][i] * b[k][j]).sum();
            btb[i][j] = s;
            m[i][j] = b_dot[i][j] + s;
        }
    }
    let tr: f64 = (0..d).map(|k| b[k][k]).sum();
    let s2a = libm::sqrt(2.0 * a);
    let sq = libm::sqrt(q);
    Ok(-quad(&m, y, d) / (2.0 * s2a * sq)
        + (a_dot / a + 1.0 - 2.0 * a + tr) / (s2a * sq)
        + quad(&btb, y, d) * ybq / (2.0 * s2a * q * sq)
        + a_dot / libm::pow(2.0 * a, 1.5) * ybq / sq)
}

/// Time derivatives of the modulation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamRates {
    pub a: f64,
    pub b: [[f64; 3]; 3],
    pub beta1: [f64; 3],
    pub beta2: [f64; 3],
    pub beta3: [f64; 3],
    pub alpha1: f64,
    pub alpha2: f64,
}

impl ParamRates {
    pub fn zero() -> Self {
        ParamRates {
            a: 0.0,
            b: [[0.0; 3]; 3],
            beta1: [0.0; 3],
            beta2: [0.0; 3],
            beta3: [0.0; 3],
            alpha1: 0.0,
            alpha2: 0.0,
        }
    }
}

/// Source term `G` at `(y, θ)`.
pub fn source_g(p: &ProfileParams, rates: &ParamRates, y: &[f64], theta: f64) -> Result<f64> {
    let d = p.dim;
    let q = 2.0 + p.quad_form(y);
    if !(q > 0.0) {
        return Err(domain(format!("source G outside positivity domain: 2 + yBy = {q}")));
    }
    let (s, c) = libm::sincos(theta);
    let mut out = 0.0;
    for k in 0..d {
        out += (2.0 * p.a / q * p.beta1[k] - rates.beta1[k]) * y[k];
        out -= rates.beta2[k] * y[k] * c + rates.beta3[k] * y[k] * s;
    }
    out += (0.5 * p.alpha1 - rates.alpha1) * c + (0.5 * p.alpha2 - rates.alpha2) * s;
    Ok(out)
}

/// Residuals of the modulation ODEs at one sample, plus the size ratios they are measured against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeResidual {
    pub tau: f64,
    /// `‖Ḃ + BᵀB‖` (Frobenius).
    pub b: f64,
    /// `|(1/a) q̇ − 2q|`, `q = a − 1/2 − tr B / 2`.
    pub a: f64,
    /// `|β̇₁ − aβ₁|`.
    pub beta1: f64,
    /// `max(|β̇₂|, |β̇₃|)`.
    pub beta23: f64,
    /// `max(|α̇₁ − α₁/2|, |α̇₂ − α₂/2|)`.
    pub alpha: f64,
    /// `|a − 1/2| τ`.
    pub a_size: f64,
    /// `|β₁| τ²`.
    pub beta1_size: f64,
    /// `max(|β₂|, |β₃|) τ³`.
    pub beta23_size: f64,
    /// `max(|α₁|, |α₂|) τ³`.
    pub alpha_size: f64,
}

impl OdeResidual {
    /// Names of the quantities exceeding `c τ^{-k}` at their expected order.
    pub fn violations(&self, c: f64) -> Vec<&'static str> {
        let t = self.tau;
        let mut out = Vec::new();
        let checks = [
            ("dB+BB", self.b * t * t * t),
            ("a-equation", self.a * t * t),
            ("beta1-equation", self.beta1 * t * t * t),
            ("beta23-equation", self.beta23 * t * t * t),
            ("alpha-equation", self.alpha * t * t * t),
            ("a-size", self.a_size),
            ("beta1-size", self.beta1_size),
            ("beta23-size", self.beta23_size),
            ("alpha-size", self.alpha_size),
        ];
        for (name, v) in checks {
            if !(v <= c) {
                out.push(name);
            }
        }
        out
    }
}

/// Three-point derivative weights on a non-uniform stencil at `x[i]`.
fn diff_weights(x: &[f64], i: usize) -> ([usize; 3], [f64; 3]) {
    let n = x.len();
    let idx = if i == 0 {
        [0, 1, 2]
    } else if i == n - 1 {
        [n - 3, n - 2, n - 1]
    } else {
        [i - 1, i, i + 1]
    };
    let nodes = [x[idx[0]], x[idx[1]], x[idx[2]]];
    let c = crate::fd::fornberg(x[i], &nodes, 1);
    (idx, [c[1][0], c[1][1], c[1][2]])
}

/// Residuals of the modulation ODEs along a sampled series, by three-point differences.
pub fn ode_residuals(series: &[(f64, ProfileParams)]) -> Result<Vec<OdeResidual>> {
    if series.len() < 5 {
        return Err(structural(format!(
            "ODE residuals need at least 5 samples, got {}",
            series.len()
        )));
    }
    let taus: Vec<f64> = series.iter().map(|s| s.0).collect();
    if taus.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(structural("sample times must be strictly increasing"));
    }
    let d = series[0].1.dim;
    let mut out = Vec::with_capacity(series.len());
    for i in 0..series.len() {
        let (idx, w) = diff_weights(&taus, i);
        let rate = |f: &dyn Fn(&ProfileParams) -> f64| -> f64 {
            (0..3).map(|k| w[k] * f(&series[idx[k]].1)).sum()
        };
        let (tau, p) = (taus[i], &series[i].1);
        let mut bres = 0.0;
        for r in 0..d {
            for c in 0..d {
                let bd = rate(&|q: &ProfileParams| q.b[r][c]);
                let btb: f64 = (0..d).map(|k| p.b[k][r] * p.b[k][c]).sum();
                bres += (bd + btb) * (bd + btb);
            }
        }
        let qf = |q: &ProfileParams| q.a - 0.5 - 0.5 * q.trace_b();
        let ares = (rate(&qf) / p.a - 2.0 * qf(p)).abs();
        let mut b1 = 0.0;
        let mut b23: f64 = 0.0;
        let mut n1 = 0.0;
        let mut n23: f64 = 0.0;
        let (mut n2, mut n3) = (0.0, 0.0);
        for k in 0..d {
            let r1 = rate(&|q: &ProfileParams| q.beta1[k]) - p.a * p.beta1[k];
            b1 += r1 * r1;
            let r2 = rate(&|q: &ProfileParams| q.beta2[k]);
            let r3 = rate(&|q: &ProfileParams| q.beta3[k]);
            b23 = b23.max(r2.abs()).max(r3.abs());
            n1 += p.beta1[k] * p.beta1[k];
            n2 += p.beta2[k] * p.beta2[k];
            n3 += p.beta3[k] * p.beta3[k];
        }
        n23 = n23.max(libm::sqrt(n2)).max(libm::sqrt(n3));
        let a1 = rate(&|q: &ProfileParams| q.alpha1) - 0.5 * p.alpha1;
        let a2 = rate(&|q: &ProfileParams| q.alpha2) - 0.5 * p.alpha2;
        out.push(OdeResidual {
            tau,
            b: libm::sqrt(bres),
            a: ares,
            beta1: libm::sqrt(b1),
            beta23: b23,
            alpha: a1.abs().max(a2.abs()),
            a_size: (p.a - 0.5).abs() * tau,
            beta1_size: libm::sqrt(n1) * tau * tau,
            beta23_size: n23 * tau * tau * tau,
            alpha_size: p.alpha1.abs().max(p.alpha2.abs()) * tau * tau * tau,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cutoff::build_chi;
    use alloc::sync::Arc;
    use approx::assert_abs_diff_eq;
    use core::f64::consts::SQRT_2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Initial guess sharing most of `B` with `p`, everything else at the cylinder.
    fn near(p: &ProfileParams) -> ProfileParams {
        let mut g = ProfileParams::cylinder(p.dim);
        for i in 0..p.dim {
            for j in 0..p.dim {
                g.b[i][j] = 0.9 * p.b[i][j];
            }
        }
        g
    }

    fn grid(d: usize) -> Arc<Grid> {
        match d {
            1 => Grid::new(1, 161, 12.0, 8).unwrap(),
            2 => Grid::new(2, 61, 12.0, 8).unwrap(),
            _ => Grid::new(3, 31, 12.0, 8).unwrap(),
        }
    }

    #[test]
    fn profile_values() {
        let z = [[0.0; 3]; 3];
        assert_abs_diff_eq!(profile_value(0.5, &z, &[3.0]).unwrap(), SQRT_2, epsilon = 1e-15);
        let mut b = [[0.0; 3]; 3];
        b[0][0] = 2.0;
        assert_abs_diff_eq!(profile_value(0.5, &b, &[1.0]).unwrap(), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(profile_value(2.0, &z, &[1.0]).unwrap(), 0.5f64.sqrt(), epsilon = 1e-15);
        b[0][0] = -3.0;
        assert!(profile_value(0.5, &b, &[1.0]).is_err());
        assert!(profile_value(0.0, &z, &[1.0]).is_err());
    }

    #[test]
    fn condition_count_matches_unknowns() {
        for (d, n) in [(1, 7), (2, 12), (3, 18)] {
            assert_eq!(conditions(d).len(), n);
            assert_eq!(ProfileParams::unknown_count(d), n);
            assert_eq!(ProfileParams::cylinder(d).to_vec().len(), n);
        }
    }

    #[test]
    fn pack_round_trip() {
        let mut p = ProfileParams::with_diag(3, 0.6, &[0.1, 0.2, 0.3]);
        p.b[0][2] = 0.05;
        p.b[2][0] = 0.05;
        p.beta2 = [1.0, 2.0, 3.0];
        p.alpha2 = -0.4;
        assert_eq!(ProfileParams::from_vec(3, &p.to_vec()), p);
    }

    #[test]
    fn recovers_exact_profiles() {
        let fam = build_chi(0.25).unwrap();
        let g = grid(3);
        let p = ProfileParams::with_diag(3, 0.5, &[0.1, 0.0, 0.0]);
        let v = synthesize(&g, &p).unwrap();
        let r = fit(&v, 9.0, &fam, &near(&p)).unwrap();
        for (a, b) in r.params.to_vec().iter().zip(p.to_vec()) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(r.w.sup_abs() <= 1e-9);
        assert!(r.residual <= 1e-9);

        let g = grid(1);
        let v = GraphField::from_fn(&g, FieldRole::Rescaled, |_, _| SQRT_2).unwrap();
        let r = fit(&v, 9.0, &fam, &ProfileParams::cylinder(1)).unwrap();
        for (a, b) in r.params.to_vec().iter().zip(ProfileParams::cylinder(1).to_vec()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn recovers_tilt_mode() {
        let fam = build_chi(0.25).unwrap();
        let g = grid(2);
        let p = ProfileParams::with_diag(2, 0.5, &[0.1, 0.0]);
        let v = GraphField::from_fn(&g, FieldRole::Rescaled, |y, t| {
            p.model(y, t).unwrap() + 0.01 * y[0] * libm::cos(t)
        })
        .unwrap();
        let r = fit(&v, 9.0, &fam, &near(&p)).unwrap();
        assert!((r.params.beta2[0] - 0.01).abs() < 1e-6);
        assert!(r.params.beta2[1].abs() < 1e-6);
        assert!(r.w.sup_abs() < 1e-9);
    }

    #[test]
    fn remainder_is_orthogonal_for_generic_data() {
        let fam = build_chi(0.5).unwrap();
        let g = grid(1);
        let v = GraphField::from_fn(&g, FieldRole::Rescaled, |y, t| {
            libm::sqrt(2.0 + 0.05 * y[0] * y[0]) + 0.02 * libm::exp(-y[0] * y[0]) * libm::cos(2.0 * t)
                + 0.01 * libm::sin(y[0]) * libm::cos(t)
                + 0.003 * y[0] * y[0] * y[0] / (1.0 + y[0] * y[0])
        })
        .unwrap();
        let r = fit(&v, 7.0, &fam, &ProfileParams::with_diag(1, 0.5, &[0.05])).unwrap();
        assert!(r.residual <= 1e-9, "{}", r.residual);
        assert!(r.w.sup_abs() > 1e-3);
    }

    #[test]
    fn gate_and_domain_errors() {
        let fam = build_chi(0.25).unwrap();
        let g = grid(1);
        let v = GraphField::from_fn(&g, FieldRole::Rescaled, |_, _| 2.0).unwrap();
        assert!(matches!(
            fit(&v, 9.0, &fam, &ProfileParams::cylinder(1)),
            Err(Error::NotInRegime { .. })
        ));
        let v = GraphField::from_fn(&g, FieldRole::Rescaled, |_, _| SQRT_2).unwrap();
        assert!(matches!(fit(&v, 11.0, &fam, &ProfileParams::cylinder(1)), Err(Error::Domain(_))));
        let opts = FitOptions { max_iter: 0, ..FitOptions::default() };
        let v = GraphField::from_fn(&g, FieldRole::Rescaled, |_, _| 1.45).unwrap();
        assert!(matches!(
            fit_with(&v, 9.0, &fam, &ProfileParams::cylinder(1), &opts),
            Err(Error::FitFailure { .. })
        ));
    }

    #[test]
    fn rotation_sorting_and_signs() {
        let mut p = ProfileParams::cylinder(2);
        p.b = [[0.0, 0.05, 0.0], [0.05, 0.0, 0.0], [0.0; 3]];
        let r = p.rotation();
        assert_abs_diff_eq!(r.eigenvalues[0], 0.05, epsilon = 1e-14);
        assert_abs_diff_eq!(r.eigenvalues[1], -0.05, epsilon = 1e-14);
        for col in 0..2 {
            let lead = if r.rotation[0][col].abs() > 1e-14 { r.rotation[0][col] } else { r.rotation[1][col] };
            assert!(lead > 0.0);
        }
        let p = ProfileParams::with_diag(3, 0.5, &[0.0, 1.0 / 40.0, 0.9 / 40.0]);
        let (ev, class) = p.classify(40.0);
        assert_abs_diff_eq!(ev[0], 1.0, epsilon = 1e-12);
        assert_eq!(class, vec![1, 1, 0]);
    }

    #[test]
    fn stationary_sources_vanish() {
        let z = [[0.0; 3]; 3];
        for y in [[0.0], [1.5], [-7.0]] {
            assert_eq!(source_f(0.5, 0.0, &z, &z, &y).unwrap(), 0.0);
        }
        let p = ProfileParams::cylinder(2);
        assert_eq!(source_g(&p, &ParamRates::zero(), &[1.0, -2.0], 0.3).unwrap(), 0.0);
    }

    /// `F` equals `−∂_τV + ΔV − ½ y·∇V + ½V − 1/V` for `V = V_{a(τ),B(τ)}`.
    fn direct_residual(a: f64, ad: f64, b: &[[f64; 3]; 3], bd: &[[f64; 3]; 3], y: &[f64]) -> f64 {
        let d = y.len();
        let v = |a: f64, b: &[[f64; 3]; 3], y: &[f64]| profile_value(a, b, y).unwrap();
        let ht = 1e-5;
        let mut bp = *b;
        let mut bm = *b;
        for i in 0..3 {
            for j in 0..3 {
                bp[i][j] += ht * bd[i][j];
                bm[i][j] -= ht * bd[i][j];
            }
        }
        let vt = (v(a + ht * ad, &bp, y) - v(a - ht * ad, &bm, y)) / (2.0 * ht);
        let h = 1e-4;
        let v0 = v(a, b, y);
        let mut lap = 0.0;
        let mut drift = 0.0;
        for k in 0..d {
            let mut yp = y.to_vec();
            let mut ym = y.to_vec();
            yp[k] += h;
            ym[k] -= h;
            let (fp, fm) = (v(a, b, &yp), v(a, b, &ym));
            lap += (fp - 2.0 * v0 + fm) / (h * h);
            drift += y[k] * (fp - fm) / (2.0 * h);
        }
        -vt + lap - 0.5 * drift + 0.5 * v0 - 1.0 / v0
    }

    #[test]
    fn source_f_matches_direct_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for d in 1..=3 {
            for _ in 0..20 {
                let mut b = [[0.0; 3]; 3];
                let mut bd = [[0.0; 3]; 3];
                for i in 0..d {
                    for j in i..d {
                        let x = rng.random_range(-0.05..0.1) * if i == j { 1.0 } else { 0.3 };
                        let xd = rng.random_range(-0.02..0.02);
                        b[i][j] = x;
                        b[j][i] = x;
                        bd[i][j] = xd;
                        bd[j][i] = xd;
                    }
                }
                let a = rng.random_range(0.4..0.7);
                let ad = rng.random_range(-0.1..0.1);
                let y: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
                if 2.0 + quad(&b, &y, d) < 0.5 {
                    continue;
                }
                let f = source_f(a, ad, &b, &bd, &y).unwrap();
                let r = direct_residual(a, ad, &b, &bd, &y);
                assert!((f - r).abs() < 1e-5, "d={d} {f} {r}");
            }
        }
    }

    #[test]
    fn source_f_for_b_riccati_solution() {
        // B = bI with ḃ = −b² kills the first term; compare the rest with a hand evaluation.
        let bb = 0.04;
        let mut b = [[0.0; 3]; 3];
        let mut bd = [[0.0; 3]; 3];
        for k in 0..2 {
            b[k][k] = bb;
            bd[k][k] = -bb * bb;
        }
        let s = libm::sqrt(0.5 / bb);
        let y = [s, s];
        // |y|²b = 1, so yᵀBy = 1, yᵀBᵀBy = b, Q = 3, a = 1/2: F = 2b/√3 + b/(2·3√3).
        let expect = 2.0 * bb / libm::sqrt(3.0) + bb / (6.0 * libm::sqrt(3.0));
        assert_abs_diff_eq!(source_f(0.5, 0.0, &b, &bd, &y).unwrap(), expect, epsilon = 1e-15);
    }

    #[test]
    fn source_g_terms() {
        let mut p = ProfileParams::cylinder(1);
        p.beta1[0] = 0.1;
        p.alpha1 = 0.2;
        let mut r = ParamRates::zero();
        r.beta2[0] = 0.3;
        let y = [2.0];
        let expect = 2.0 * 0.5 / 2.0 * 0.1 * 2.0 - 0.3 * 2.0 * libm::cos(0.7) + 0.1 * libm::cos(0.7);
        assert_abs_diff_eq!(source_g(&p, &r, &y, 0.7).unwrap(), expect, epsilon = 1e-15);
    }

    fn series(f: impl Fn(f64) -> ProfileParams) -> Vec<(f64, ProfileParams)> {
        (0..=20).map(|i| {
            let t = 20.0 + 0.5 * i as f64;
            (t, f(t))
        })
        .collect()
    }

    #[test]
    fn riccati_series_has_small_residual() {
        let s = series(|t| ProfileParams::with_diag(1, 0.5, &[1.0 / t]));
        let r = ode_residuals(&s).unwrap();
        for x in &r[1..r.len() - 1] {
            assert!(x.b <= 1e-5, "{}", x.b);
        }
        let s = series(|t| ProfileParams::with_diag(3, 0.5 + 1.5 / t, &[1.0 / t, 1.0 / t, 1.0 / t]));
        let r = ode_residuals(&s).unwrap();
        let ratio: Vec<f64> = r.iter().map(|x| x.a * x.tau * x.tau).collect();
        assert!(ratio.iter().all(|&v| v < 10.0));
        assert!(ode_residuals(&s[..4]).is_err());
    }

    #[test]
    fn riccati_series_residual_on_fine_samples() {
        let s: Vec<(f64, ProfileParams)> = (0..=40)
            .map(|i| {
                let t = 20.0 + 0.01 * i as f64;
                (t, ProfileParams::with_diag(2, 0.5, &[1.0 / t, 1.0 / t]))
            })
            .collect();
        let r = ode_residuals(&s).unwrap();
        assert!(r.iter().all(|x| x.b <= 1e-8), "{:?}", r[0].b);
    }

    #[test]
    fn exponential_alpha_is_flagged() {
        let s = series(|t| {
            let mut p = ProfileParams::with_diag(1, 0.5, &[1.0 / t]);
            p.alpha1 = 1e-6 * libm::exp(0.5 * t);
            p
        });
        let r = ode_residuals(&s).unwrap();
        let last = r.last().unwrap();
        assert!(last.violations(50.0).contains(&"alpha-size"));
        let calm = series(|t| {
            let mut p = ProfileParams::with_diag(1, 0.5, &[1.0 / t]);
            p.alpha1 = 1.0 / (t * t * t);
            p
        });
        let r = ode_residuals(&calm).unwrap();
        assert!(r[r.len() / 2].violations(50.0).is_empty(), "{:?}", r[r.len() / 2]);
    }

    fn random_params(rng: &mut ChaCha8Rng, d: usize) -> ProfileParams {
        let mut p = ProfileParams::cylinder(d);
        p.a = 0.5 + rng.random_range(-0.02..0.02);
        for i in 0..d {
            for j in i..d {
                let x = if i == j { rng.random_range(0.0..0.05) } else { rng.random_range(-0.005..0.005) };
                p.b[i][j] = x;
                p.b[j][i] = x;
            }
            p.beta1[i] = rng.random_range(-0.01..0.01);
            p.beta2[i] = rng.random_range(-0.01..0.01);
            p.beta3[i] = rng.random_range(-0.01..0.01);
        }
        p.alpha1 = rng.random_range(-0.01..0.01);
        p.alpha2 = rng.random_range(-0.01..0.01);
        p
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn fit_inverts_synthesis(seed in 0u64..1_000_000, d in 1usize..=2) {
            let fam = build_chi(0.25).unwrap();
            let g = grid(d);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_params(&mut rng, d);
            let v = synthesize(&g, &p).unwrap();
            let r = fit(&v, 9.0, &fam, &near(&p)).unwrap();
            for (a, b) in r.params.to_vec().iter().zip(p.to_vec()) {
                prop_assert!((a - b).abs() < 1e-6);
            }
            prop_assert!(r.residual <= 1e-9);
        }
    }
}

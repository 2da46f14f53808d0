//! Radial cutoffs: the ε-family `χ` vanishing to order 20 at `1 + ε`, its scaled form
//! `χ_Ω(y) = χ(|y|/Ω)`, the plateau cutoff `χ̃_Ω`, and the constant `κ(ε)`.
//!
//! On `[1, 1+ε]` the transition is `χ(s) = g(r)`, `r = (1+ε−s)/ε`, where
//! `g(r) = r²⁰ Σ_{k=0}^{5} C(19+k, k)(1−r)^k` is the regularized incomplete beta
//! function `I_r(20, 6)`. Then `g' = 1062600 r¹⁹(1−r)⁵ ≥ 0`, so `χ` is decreasing, all
//! derivatives through order 5 vanish at `s = 1`, and `χ ~ 53130 r²⁰` at the outer edge.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{domain, Error, Result};

const BINOM: [f64; 6] = [1.0, 20.0, 210.0, 1540.0, 8855.0, 42504.0];
const BETA_NORM: f64 = 1_062_600.0;
const EDGE_CONST: f64 = 53_130.0;

/// Number of uniform scan points across the transition.
pub const SCAN_POINTS: usize = 10_000;

/// A radially symmetric profile `s ↦ χ(s)` with derivatives through order 5.
pub trait RadialProfile {
    /// `[χ, χ', …, χ⁽⁵⁾]` at `s ≥ 0`.
    fn jet(&self, s: f64) -> [f64; 6];
    /// Inner and outer radius of the transition region.
    fn transition(&self) -> (f64, f64);
}

fn falling(a: i64, k: usize) -> f64 {
    (0..k as i64).map(|i| (a - i) as f64).product()
}

fn binom(n: usize, k: usize) -> f64 {
    falling(n as i64, k) / falling(k as i64, k)
}

/// `I_r(20, 6)` and its first five derivatives in `r ∈ [0, 1]`.
fn beta_jet(r: f64) -> [f64; 6] {
    let r = r.clamp(0.0, 1.0);
    let q = 1.0 - r;
    let mut out = [0.0; 6];
    out[0] = if r <= 0.5 {
        let mut poly = 0.0;
        let mut qk = 1.0;
        for c in BINOM {
            poly += c * qk;
            qk *= q;
        }
        libm::pow(r, 20.0) * poly
    } else {
        // 1 − I_q(6, 20) keeps the value below 1 near the plateau.
        let mut poly = 0.0;
        let mut rk = 1.0;
        let mut c = 1.0;
        for k in 0..20 {
            poly += c * rk;
            rk *= r;
            c = c * (6 + k) as f64 / (k + 1) as f64;
        }
        1.0 - libm::pow(q, 6.0) * poly
    };
    // g^{(n+1)} = 1062600 · dⁿ/drⁿ [r¹⁹ (1−r)⁵]
    for n in 0..5 {
        let mut s = 0.0;
        for i in 0..=n {
            let j = n - i;
            if i > 19 || j > 5 {
                continue;
            }
            let a = falling(19, i) * libm::pow(r, (19 - i) as f64);
            let b = falling(5, j) * libm::pow(q, (5 - j) as f64);
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            s += binom(n, i) * a * b * sign;
        }
        out[n + 1] = BETA_NORM * s;
    }
    out
}

/// The ε-parametrized cutoff `χ` with its certified constants.
#[derive(Debug, Clone, PartialEq)]
pub struct CutoffFamily {
    eps: f64,
    kappa: f64,
    sup_derivs: [f64; 5],
}

impl RadialProfile for CutoffFamily {
    fn jet(&self, s: f64) -> [f64; 6] {
        let mut out = [0.0; 6];
        if s <= 1.0 {
            out[0] = 1.0;
            return out;
        }
        if s >= 1.0 + self.eps {
            return out;
        }
        let g = beta_jet((1.0 + self.eps - s) / self.eps);
        let mut scale = 1.0;
        for k in 0..6 {
            out[k] = g[k] * scale;
            scale *= -1.0 / self.eps;
        }
        out
    }

    fn transition(&self) -> (f64, f64) {
        (1.0, 1.0 + self.eps)
    }
}

impl CutoffFamily {
    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn value(&self, s: f64) -> f64 {
        self.jet(s)[0]
    }

    /// `sup |χ⁽ᵏ⁾|` for `k = 1..=5` from the certification scan.
    pub fn sup_derivatives(&self) -> [f64; 5] {
        self.sup_derivs
    }

    /// Leading constants `M_k` with `χ⁽ᵏ⁾(s) ≈ M_k (1+ε−s)^{20−k}` as `s → 1+ε`.
    pub fn edge_constant(&self, k: usize) -> f64 {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sign * EDGE_CONST * falling(20, k) * libm::pow(self.eps, -20.0)
    }
}

/// Builds and certifies `χ` for `ε ∈ (0, 1]`.
pub fn build_chi(eps: f64) -> Result<CutoffFamily> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(domain(format!("cutoff width eps = {eps} not in (0, 1]")));
    }
    let mut fam = CutoffFamily { eps, kappa: 0.0, sup_derivs: [0.0; 5] };
    certify(&fam)?;
    let scan = scan(&fam)?;
    fam.kappa = scan.kappa;
    fam.sup_derivs = scan.sup_derivs;
    Ok(fam)
}

/// Invariant checks specific to the family: plateau, support, monotonicity, endpoint matching.
fn certify(fam: &CutoffFamily) -> Result<()> {
    let eps = fam.eps;
    let bad = |msg: alloc::string::String| Err(Error::ConstructionInvalid(msg));
    for i in 0..=1000 {
        let s = i as f64 / 1000.0;
        if fam.value(s) != 1.0 {
            return bad(format!("chi({s}) != 1 on the plateau"));
        }
        if fam.value(1.0 + eps + s) != 0.0 {
            return bad(format!("chi({}) != 0 outside the support", 1.0 + eps + s));
        }
    }
    let pts = scan_points(1.0, 1.0 + eps);
    let mut prev = f64::INFINITY;
    for &s in &pts {
        let v = fam.value(s);
        if v > prev + 4.0 * f64::EPSILON {
            return bad(format!("chi increases at s = {s}"));
        }
        prev = v;
    }
    let inner = beta_jet(1.0);
    let outer = beta_jet(0.0);
    for k in 1..=5 {
        if inner[k] != 0.0 || outer[k] != 0.0 {
            return bad(format!("derivative of order {k} does not vanish at an endpoint"));
        }
    }
    Ok(())
}

/// Uniform points plus geometric refinement toward both ends of `[a, b]`.
fn scan_points(a: f64, b: f64) -> Vec<f64> {
    let w = b - a;
    let mut pts: Vec<f64> =
        (0..=SCAN_POINTS).map(|i| a + w * i as f64 / SCAN_POINTS as f64).collect();
    for k in 1..=60 {
        let off = w * libm::pow(10.0, -(k as f64) / 4.0 - 4.0);
        pts.push(a + off);
        pts.push(b - off);
    }
    pts.sort_by(|x, y| x.partial_cmp(y).unwrap_or(core::cmp::Ordering::Equal));
    pts.dedup();
    pts
}

struct ScanResult {
    kappa: f64,
    sup_derivs: [f64; 5],
}

/// Fixed directions on the unit sphere of ℝ³: coordinate axes, diagonals and a spiral set.
fn directions() -> Vec<[f64; 3]> {
    let mut out: Vec<[f64; 3]> = Vec::new();
    let s2 = 1.0 / libm::sqrt(2.0);
    let s3 = 1.0 / libm::sqrt(3.0);
    out.push([1.0, 0.0, 0.0]);
    out.push([s2, s2, 0.0]);
    out.push([s3, s3, s3]);
    let n = 64;
    let golden = core::f64::consts::PI * (3.0 - libm::sqrt(5.0));
    for i in 0..n {
        let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
        let r = libm::sqrt(1.0 - z * z);
        let (s, c) = libm::sincos(golden * i as f64);
        out.push([r * c, r * s, z]);
    }
    out
}

/// `Σ_{|l|=1..3} |∂^l χ|` over multi-indices in ℝ³ for a radial function at radius `r`,
/// in direction `e`, given `f', f'', f'''`.
fn multi_index_sum(r: f64, e: &[f64; 3], f1: f64, f2: f64, f3: f64) -> f64 {
    let mut total: f64 = e.iter().map(|c| (f1 * c).abs()).sum();
    let hess = |i: usize, j: usize| {
        let d = if i == j { 1.0 } else { 0.0 };
        f2 * e[i] * e[j] + f1 / r * (d - e[i] * e[j])
    };
    for i in 0..3 {
        for j in i..3 {
            total += hess(i, j).abs();
        }
    }
    let a = f3 - 3.0 * f2 / r + 3.0 * f1 / (r * r);
    let b = f2 / r - f1 / (r * r);
    let delta = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 };
    for i in 0..3 {
        for j in i..3 {
            for k in j..3 {
                let t = a * e[i] * e[j] * e[k]
                    + b * (delta(i, j) * e[k] + delta(i, k) * e[j] + delta(j, k) * e[i]);
                total += t.abs();
            }
        }
    }
    total
}

fn scan<P: RadialProfile + ?Sized>(p: &P) -> Result<ScanResult> {
    let (a, b) = p.transition();
    if !(a > 0.0 && b > a) {
        return Err(Error::ConstructionInvalid(format!("transition [{a}, {b}] is empty")));
    }
    let pts = scan_points(a, b);
    let dirs = directions();
    let mut sup_derivs = [0.0f64; 5];
    let mut sup_ratio: f64 = 0.0;
    let mut ratios = Vec::with_capacity(pts.len());
    let mut prev: Option<(f64, [f64; 6])> = None;
    for &s in &pts {
        let j = p.jet(s);
        if j.iter().any(|v| !v.is_finite()) {
            return Err(Error::ConstructionInvalid(format!("non-finite jet at s = {s}")));
        }
        for k in 0..5 {
            sup_derivs[k] = sup_derivs[k].max(j[k + 1].abs());
        }
        if let Some((s0, j0)) = prev {
            // Values must be the integral of the reported derivative.
            let ds = s - s0;
            let trap = 0.5 * (j0[1] + j[1]) * ds;
            let tol = 1e-9 + ds * ds * ds * (j0[3].abs() + j[3].abs());
            if (j[0] - j0[0] - trap).abs() > tol {
                return Err(Error::ConstructionInvalid(format!(
                    "profile jumps between s = {s0} and s = {s}"
                )));
            }
        }
        prev = Some((s, j));
        let ratio = if j[0] > 0.0 {
            let w = libm::pow(j[0], -0.75);
            dirs.iter()
                .map(|e| w * multi_index_sum(s, e, j[1], j[2], j[3]))
                .fold(0.0, f64::max)
        } else {
            0.0
        };
        sup_ratio = sup_ratio.max(ratio);
        ratios.push((s, ratio));
    }
    // The ratio must stay bounded as χ → 0 at the outer edge.
    let tail: Vec<f64> = ratios
        .iter()
        .rev()
        .filter(|(s, r)| *s < b && *r > 0.0)
        .take(12)
        .map(|(_, r)| *r)
        .collect();
    if tail.len() >= 12 && tail.windows(2).all(|w| w[0] > w[1]) && tail[0] > 2.0 * tail[11] {
        return Err(Error::ConstructionInvalid(
            "chi^{-3/4} derivative ratio grows without bound at the outer edge".into(),
        ));
    }
    let kappa = sup_derivs.iter().sum::<f64>() + sup_ratio;
    if !kappa.is_finite() {
        return Err(Error::ConstructionInvalid("kappa is not finite".into()));
    }
    Ok(ScanResult { kappa, sup_derivs })
}

/// `κ = Σ_{k=1..5} sup|χ⁽ᵏ⁾| + sup Σ_{|l|=1..3} |χ^{−3/4} ∇^l χ|` by dense scan.
pub fn kappa<P: RadialProfile + ?Sized>(profile: &P) -> Result<f64> {
    scan(profile).map(|r| r.kappa)
}

/// Value, gradient and Hessian of a scaled cutoff at one point (trailing slots zero for `d < 3`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiJet {
    pub value: f64,
    pub grad: [f64; 3],
    pub hess: [[f64; 3]; 3],
}

/// `χ_Ω(y) = χ(|y|/Ω)` with first and second derivatives by the chain rule.
pub fn chi_scaled<P: RadialProfile + ?Sized>(family: &P, omega: f64, y: &[f64]) -> ChiJet {
    radial_jet(family, omega, y)
}

fn radial_jet<P: RadialProfile + ?Sized>(p: &P, omega: f64, y: &[f64]) -> ChiJet {
    let r = libm::sqrt(y.iter().map(|c| c * c).sum::<f64>());
    let j = p.jet(r / omega);
    let mut out = ChiJet { value: j[0], grad: [0.0; 3], hess: [[0.0; 3]; 3] };
    if j[1] == 0.0 && j[2] == 0.0 {
        return out;
    }
    let f1 = j[1] / omega;
    let f2 = j[2] / (omega * omega);
    let mut e = [0.0; 3];
    for (k, c) in y.iter().enumerate() {
        e[k] = c / r;
    }
    for i in 0..y.len() {
        out.grad[i] = f1 * e[i];
        for k in 0..y.len() {
            let d = if i == k { 1.0 } else { 0.0 };
            out.hess[i][k] = f2 * e[i] * e[k] + f1 / r * (d - e[i] * e[k]);
        }
    }
    out
}

/// Plateau cutoff `χ̃_Ω`: 1 for `|y| ≤ Ω(1+ε−2Ω^{−1/4})`, 0 for `|y| ≥ Ω(1+ε−Ω^{−1/4})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TildeCutoff {
    pub omega: f64,
    pub r_in: f64,
    pub r_out: f64,
}

impl TildeCutoff {
    pub fn value(&self, r: f64) -> f64 {
        self.jet(r)[0]
    }

    pub fn at(&self, y: &[f64]) -> f64 {
        self.value(libm::sqrt(y.iter().map(|c| c * c).sum::<f64>()))
    }
}

impl RadialProfile for TildeCutoff {
    fn jet(&self, r: f64) -> [f64; 6] {
        let mut out = [0.0; 6];
        if r <= self.r_in {
            out[0] = 1.0;
            return out;
        }
        if r >= self.r_out {
            return out;
        }
        let w = self.r_out - self.r_in;
        let g = beta_jet((self.r_out - r) / w);
        let mut scale = 1.0;
        for k in 0..6 {
            out[k] = g[k] * scale;
            scale *= -1.0 / w;
        }
        out
    }

    fn transition(&self) -> (f64, f64) {
        (self.r_in, self.r_out)
    }
}

pub fn build_tilde_chi(omega: f64, eps: f64) -> Result<TildeCutoff> {
    if !(omega > 0.0) {
        return Err(domain(format!("Omega = {omega} must be positive")));
    }
    let q = libm::pow(omega, -0.25);
    if !(q < 0.5 * eps) {
        return Err(domain(format!(
            "Omega^(-1/4) = {q:.4} must be below eps/2 = {:.4} for ordered radii",
            0.5 * eps
        )));
    }
    Ok(TildeCutoff {
        omega,
        r_in: omega * (1.0 + eps - 2.0 * q),
        r_out: omega * (1.0 + eps - q),
    })
}

/// `(κ + 1) Ω^{−1/10} ≤ δ`.
pub fn smallness_predicate(kappa: f64, omega: f64, delta: f64) -> bool {
    (kappa + 1.0) * libm::pow(omega, -0.1) <= delta
}

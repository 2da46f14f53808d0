//! Finite-difference weights on arbitrary 1D node sets (Fornberg recursion).

use alloc::vec;
use alloc::vec::Vec;

/// Weights `c[k][j]` such that `Σ_j c[k][j] f(x[j]) ≈ f^{(k)}(z)` for `k ≤ m`.
pub(crate) fn fornberg(z: f64, x: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut c = vec![vec![0.0; n]; m + 1];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Weights for the `order`-th derivative at `z` using integer offsets, scaled by `h`.
pub(crate) fn offset_weights(z: f64, offsets: &[i64], order: usize, h: f64) -> Vec<f64> {
    let x: Vec<f64> = offsets.iter().map(|&o| o as f64).collect();
    let scale = libm::pow(h, order as f64);
    fornberg(z, &x, order)[order].iter().map(|w| w / scale).collect()
}

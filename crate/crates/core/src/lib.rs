//! Numerical kernels for generic neckpinch singularities of mean curvature
//! flow on cylindrical graphs `(z, u cos θ, u sin θ)`, `z ∈ ℝᵈ`, `d ∈ {1, 2, 3}`.
//!
//! The crate is `no_std` and only needs `alloc`. Everything that touches the
//! filesystem or the command line lives in the `neckflow` companion crate.
//!
//! Module map:
//!
//! - [`grid`]: tensor grids in `(y, θ)`, finite differences, Fourier
//!   differentiation in `θ` and Gaussian-weighted quadrature.
//! - [`geometry`]: the graph MCF right-hand side, mean curvature, unit
//!   normal and scale-invariant derivative monitors.
//! - [`rescaled`]: the self-similar rescaled equation, explicit RK4 stepping,
//!   the growing domain `Ω(τ)`, changes of variables and zoom flows.
//! - [`cutoff`]: the order-20 radial cutoff family, `κ(ε)` and the plateau
//!   cutoff used to tame `y·∇χ/χ`.
//! - [`profile`]: the profile `V_{a,B}` and the Gaussian-orthogonal
//!   decomposition of `v` into modulation parameters plus remainder.
//! - [`spectral`]: θ-frequency splitting, the circle embedding inequality,
//!   linearized operators and propagator decay fits.
//! - [`monitors`]: controlling functionals `M₁..M₄`, `Φ₁..Φ₃` and weighted
//!   `L²` norms.
//! - [`run`]: the modulated rescaled run that ties all of the above together.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod cutoff;
pub mod error;
mod fd;
pub mod geometry;
pub mod grid;
mod interp;
pub mod monitors;
pub mod profile;
pub mod rescaled;
pub mod run;
pub mod spectral;

pub use error::{Error, Result};
pub use grid::{Axis, FieldRole, Grid, GraphField};

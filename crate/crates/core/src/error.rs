use alloc::string::String;

/// Failure modes shared by every kernel in the crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Shapes, orders or grids that do not fit together.
    #[error("structural error: {0}")]
    Structural(String),
    /// NaN or infinite data where finite values are required.
    #[error("non-finite value in {0}")]
    NonFinite(String),
    /// The radius function touched zero: the flow has pinched.
    #[error("singular input: radius {min} <= 0 at node {node}")]
    Singular { min: f64, node: usize },
    /// An argument outside the domain of a formula.
    #[error("domain error: {0}")]
    Domain(String),
    /// Newton did not reach the requested residual.
    #[error("fit failed after {iterations} iterations, residual {residual:e}")]
    FitFailure { iterations: usize, residual: f64 },
    /// A cutoff or operator that violates the structure it must have.
    #[error("invalid construction: {0}")]
    ConstructionInvalid(String),
    /// The field is too far from the cylinder profile to be decomposed.
    #[error("field outside the fitting regime: deviation {deviation:.3e} > {limit:.3e}")]
    NotInRegime { deviation: f64, limit: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn structural(msg: impl Into<String>) -> Error {
    Error::Structural(msg.into())
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

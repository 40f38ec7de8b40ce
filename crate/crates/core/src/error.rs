use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("size mismatch for {what}: expected {expected}, found {found}")]
    SizeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{value} lies outside the domain ({lo}, {hi}) of the convex potential")]
    OutsideDomain { value: f64, lo: f64, hi: f64 },

    #[error("resolvent did not converge for r = {r} after {iterations} iterations")]
    ResolventNonconvergence { r: f64, iterations: usize },

    #[error("Newton did not converge at step {step} (residual {residual:e})")]
    NewtonNonconvergence { step: usize, residual: f64 },

    #[error("order parameter reached the guard of the potential domain at step {step}")]
    InvariantRegion { step: usize },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("invalid control bounds: {0}")]
    InvalidBounds(String),

    #[error("line search exhausted its backtracking budget at iteration {iteration}")]
    LineSearch { iteration: usize },
}

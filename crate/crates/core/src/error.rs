use alloc::string::String;
use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("Jacobi eigensolver did not converge within {sweeps} sweeps")]
    NoConvergence { sweeps: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("Gauss-Hermite tail estimate {estimate:e} exceeds {limit:e}")]
    QuadratureWarning { estimate: f64, limit: f64 },

    #[error("identity {identity} violated: deviation {deviation:e} exceeds tolerance {tolerance:e}")]
    IdentityViolation {
        identity: &'static str,
        deviation: f64,
        tolerance: f64,
    },

    #[error("alpha = {0} is outside (0, 1]")]
    AlphaOutOfRange(f64),

    #[error("assumption violated: smallest eigenvalue of I_XY I_X^-1 is {min_eigenvalue} < 1")]
    AssumptionViolated { min_eigenvalue: f64 },

    #[error("likelihood became non-finite at EM iteration {iteration}")]
    NonFinite { iteration: usize },

    #[error("component {component} has no labelled observations")]
    DegenerateLabels { component: usize },

    #[error("labels are required for this operation")]
    MissingLabels,

    #[error("dataset is empty")]
    EmptyData,

    #[error("enumeration over K^n label vectors requires n <= {limit}, got n = {n}")]
    EnumerationTooLarge { n: usize, limit: usize },

    #[error("alpha * n = {alpha} * {n} is not an integer")]
    AlphaGridMismatch { alpha: f64, n: usize },

    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("operation not supported: {0}")]
    Unsupported(&'static str),
}

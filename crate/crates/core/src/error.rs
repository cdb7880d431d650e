use thiserror::Error;

/// Errors raised anywhere in the testing pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum RdreamError {
    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("too few observations: n = {0}, need at least 3")]
    TooFewObservations(usize),

    #[error("covariate matrix has no columns")]
    EmptyCovariates,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("sample covariance is singular (eigenvalue {eigenvalue:e} below floor {floor:e})")]
    SingularCovariance { eigenvalue: f64, floor: f64 },

    #[error("design matrix is rank deficient")]
    RankDeficientDesign,

    #[error("link gradient is unavailable")]
    GradientUnavailable,

    #[error("robust fit did not converge after {iterations} iterations")]
    NonConvergence {
        iterations: usize,
        /// Last iterate, usable but flagged.
        last: Box<crate::data::FittedModel>,
    },

    #[error("local linear fit at anchor {0} has too few points in the kernel window")]
    SingularLocalFit(usize),

    #[error("bandwidth must be positive, got {0}")]
    DegenerateBandwidth(f64),

    #[error("variance estimate is zero: no pair of observations falls inside the kernel support")]
    DegenerateVariance,

    #[error("symmetric eigendecomposition failed")]
    EigenFailure,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("I/O error on {path}: {message}")]
    Io { path: String, message: String },

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, RdreamError>;

use rdream_core::RdreamError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("file not found: {0}")]
    FileNotFound(String),

    #[error("missing column '{0}'")]
    MissingColumn(String),

    #[error("every row of {0} was dropped (non-numeric or missing cells)")]
    AllRowsDropped(String),

    #[error("{0}")]
    Usage(String),

    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },

    #[error("cannot write {path}: {message}")]
    Write { path: String, message: String },

    #[error(transparent)]
    Core(#[from] RdreamError),
}

impl CliError {
    /// 2 input error, 3 numeric degeneracy, 4 internal error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::FileNotFound(_)
            | CliError::MissingColumn(_)
            | CliError::AllRowsDropped(_)
            | CliError::Usage(_)
            | CliError::Read { .. } => 2,
            CliError::Write { .. } => 4,
            CliError::Core(e) => match e {
                RdreamError::NonFinite { .. }
                | RdreamError::TooFewObservations(_)
                | RdreamError::EmptyCovariates
                | RdreamError::ShapeMismatch(_)
                | RdreamError::InvalidConfig(_)
                | RdreamError::Io { .. }
                | RdreamError::Parse(_)
                | RdreamError::GradientUnavailable => 2,
                RdreamError::SingularCovariance { .. }
                | RdreamError::RankDeficientDesign
                | RdreamError::NonConvergence { .. }
                | RdreamError::SingularLocalFit(_)
                | RdreamError::DegenerateBandwidth(_)
                | RdreamError::DegenerateVariance
                | RdreamError::EigenFailure => 3,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

use thiserror::Error;

/// Errors raised by the library. Each variant names the invariant that failed.
#[derive(Debug, Error)]
pub enum SmaError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("support condition violated: {0}")]
    Support(String),

    #[error("ambiguous edge point: {0}")]
    AmbiguousEdge(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("singular covariance matrix (det = {det:e})")]
    SingularCovariance { det: f64 },

    #[error("covariance factorization failed at pivot {pivot}")]
    Factorization { pivot: usize },

    #[error("window exits the sampled region: {0}")]
    Coverage(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SmaError {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        SmaError::InvalidParameter(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, SmaError>;

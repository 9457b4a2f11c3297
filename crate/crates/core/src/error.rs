use thiserror::Error;

/// Errors produced by the moment engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("svd failed to converge after {sweeps} sweeps (off-diagonal residual {residual:e})")]
    SvdNonConvergence { sweeps: usize, residual: f64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("commutant basis is incomplete: idempotence residual {residual:e}")]
    BasisIncomplete { residual: f64 },

    #[error("unsupported group: {0}")]
    UnsupportedGroup(String),

    #[error("problem too large for the dense oracle: {0}")]
    SizeGuard(String),

    #[error("serialization: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

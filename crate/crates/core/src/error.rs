use thiserror::Error;

/// Errors produced by planning, routing and simulation.
///
/// Variants are grouped by how a caller should react: `Parse` and
/// `Integrity` mean the input data is bad, `Infeasible` means the requested
/// constraints cannot be met, and `InvalidArgument` is a caller bug.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("undefined utilization: affinity matrix has no co-activation mass")]
    UndefinedUtilization,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn integrity(msg: impl Into<String>) -> Self {
        Error::Integrity(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

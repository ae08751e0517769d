use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("target acceleration unreachable: {0}")]
    UnreachableAcceleration(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("provenance check failed: {0}")]
    Provenance(String),

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::DimMismatch(msg.into())
    }

    pub fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

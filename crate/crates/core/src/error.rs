use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation contract (dimension mismatch, invalid label, ...).
    #[error("contract violation: {0}")]
    Contract(String),
    /// An invalid method/config combination, rejected before any work starts.
    #[error("configuration error: {0}")]
    Config(String),
    /// A file does not match its expected binary or text format.
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },
    /// A text file failed to parse at a specific row (1-indexed physical line).
    #[error("parse error in {path} at row {row}: {reason}")]
    Parse {
        path: String,
        row: usize,
        reason: String,
    },
    /// Incompatible shapes between loaded artifacts.
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}

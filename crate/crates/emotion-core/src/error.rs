use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Shape or dimension mismatch between tensors or layers.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Non-finite values or other numeric trouble.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Unsupported or corrupt image stream.
    #[error("decode error: {0}")]
    Decode(String),

    /// Malformed manifest file or record.
    #[error("manifest error: {0}")]
    Manifest(String),

    /// Dataset split cannot be performed as requested.
    #[error("split error: {0}")]
    Split(String),

    /// Corrupt, truncated, or inconsistent checkpoint file.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// API misuse: bad arguments, wrong call order, invalid configuration.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

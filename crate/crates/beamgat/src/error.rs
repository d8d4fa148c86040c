//! Crate-wide error type with CLI exit-code classification.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Bad usage, bad config file, or invalid parameter combination.
    #[error("config error: {0}")]
    Config(String),

    /// Input data is malformed, missing, or insufficient.
    #[error("data error: {0}")]
    Data(String),

    /// File format violation (truncated file, bad magic, bad header).
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    /// I/O failure with path context.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Tensor/graph dimension mismatch.
    #[error("shape error: {0}")]
    Shape(String),

    /// Anything that indicates a bug rather than bad input.
    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code: 1 usage/config, 2 data, 3 internal.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) => 1,
            Error::Data(_) | Error::Format { .. } | Error::Io { .. } => 2,
            Error::Shape(_) | Error::Internal(_) => 3,
        }
    }
}

//! Error types shared across the crate.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: row {row}: {message}")]
    Row {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Schema { path: PathBuf, message: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("config: {0}")]
    Config(String),

    #[error("root finding failed: {0}")]
    Root(String),

    #[error("return level unavailable: cell has no hail days in the record")]
    NoData,

    #[error("return period is infinite: F(x) = 1 within tolerance")]
    InfinitePeriod,

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("model file: {0}")]
    Model(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn row(path: impl Into<PathBuf>, row: usize, message: impl Into<String>) -> Self {
        Error::Row {
            path: path.into(),
            row,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not line up for the requested operation.
    #[error("dimension error: {0}")]
    Dim(String),

    /// An operation was called outside its contract (non-scalar loss,
    /// mismatched stream state, ground-truth frame out of range, ...).
    #[error("contract error: {0}")]
    Contract(String),

    /// Invalid configuration value.
    #[error("config error: {0}")]
    Config(String),

    /// A value left the numeric domain of an operation (log of a
    /// non-positive value, NaN/Inf appearing in a computation).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Malformed on-disk data; `offset` is the byte offset of the
    /// first bad byte where that is meaningful.
    #[error("format error in {path} at byte {offset}: {msg}")]
    Format {
        path: String,
        offset: u64,
        msg: String,
    },

    /// Malformed CSV row; `line` is 1-based and counts the header.
    #[error("parse error in {path} at line {line}: {msg}")]
    Parse {
        path: String,
        line: u64,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dim(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}

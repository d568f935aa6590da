use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the kernels and the file codecs.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("bad magic at byte {offset}: expected {expected:?}, found {found:?}")]
    BadMagic {
        offset: usize,
        expected: String,
        found: String,
    },

    #[error("unsupported {field} {value} at byte {offset}")]
    Unsupported {
        field: &'static str,
        value: u64,
        offset: usize,
    },

    #[error("truncated input at byte {offset}: needed {needed} more bytes, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },

    #[error("{extra} trailing bytes after payload ending at byte {offset}")]
    TrailingBytes { offset: usize, extra: usize },

    #[error("dimension overflow at byte {offset}: {dims:?}")]
    DimOverflow { offset: usize, dims: Vec<u64> },

    #[error("malformed {format} header: {reason}")]
    Header { format: &'static str, reason: String },

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Param(msg.into())
    }
}

//! Crate-wide error type.

use std::fmt;

/// Errors raised by the numeric kernel, training loop and evaluation pipeline.
#[derive(Debug)]
pub enum Error {
    /// Matrix/layer shapes do not line up.
    Dimension(String),
    /// Input outside the mathematical domain of an operation (bad label,
    /// non-distribution probability vector, non-positive temperature, ...).
    Domain(String),
    /// API misuse: mismatched cache, wrong attribute count, missing checkpoint.
    Usage(String),
    /// A loss or parameter became NaN/Inf during training.
    Numerical(String),
    /// Invalid generator spec or malformed dataset.
    Data(String),
    /// Invalid MDL fraction schedule (empty block, non-increasing fractions).
    Schedule(String),
    Io(std::io::Error),
    /// Malformed serialized payload (checkpoint, dump, JSONL).
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(msg) => write!(f, "dimension mismatch: {msg}"),
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::Usage(msg) => write!(f, "usage error: {msg}"),
            Error::Numerical(msg) => write!(f, "numerical failure: {msg}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::Schedule(msg) => write!(f, "schedule error: {msg}"),
            Error::Io(err) => write!(f, "i/o error: {err}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err)
    }
}

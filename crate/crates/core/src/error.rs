//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by every layer of the crate.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    /// Two operands have incompatible shapes; both are reported.
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// An operation produced (or was handed) NaN/Inf values.
    #[error("{op}: non-finite values encountered")]
    NonFinite { op: &'static str },

    /// A parameter violates its documented precondition.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An API contract was violated (e.g. backward on a non-scalar root).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A persisted file does not match the expected binary or text format.
    #[error("format error: {0}")]
    Format(String),

    /// Underlying I/O failure while reading or writing artifacts.
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

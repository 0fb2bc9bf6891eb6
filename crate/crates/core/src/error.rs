use alloc::string::String;
use core::fmt;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two objects that must share a dimension do not.
    DimensionMismatch { expected: usize, found: usize },
    /// The code table would exceed the configured row limit.
    Capacity { codes: u128, limit: usize },
    /// A parameter violates its invariant.
    InvalidParameter(String),
    /// Input data cannot be used (empty, degenerate, non-finite).
    InvalidData(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::Capacity { codes, limit } => {
                write!(f, "code table of {codes} entries exceeds the limit of {limit}")
            }
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::InvalidData(msg) => write!(f, "invalid data: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<(), Error> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

//! Error type shared across the math core.

use alloc::string::String;
use core::fmt;

/// Errors raised by the math core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An input violates a precondition (shape, range, emptiness).
    InvalidInput(String),
    /// A numerically degenerate input (zero-norm vector, zero-norm prototype).
    DegenerateInput(String),
    /// A feature configuration that exists as a plug point but is not built.
    Unsupported(String),
    /// A dataset split that cannot support the requested evaluation.
    InvalidSplit(String),
    /// Training produced a non-finite loss.
    Diverged(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidInput(m) => write!(f, "invalid input: {m}"),
            Error::DegenerateInput(m) => write!(f, "degenerate input: {m}"),
            Error::Unsupported(m) => write!(f, "unsupported: {m}"),
            Error::InvalidSplit(m) => write!(f, "invalid split: {m}"),
            Error::Diverged(m) => write!(f, "training diverged: {m}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;

//! Error taxonomy shared by every module in the crate.

use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

/// Failure classes surfaced by the tensor ops, blocks, pipeline, and codecs.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Shapes that cannot be combined (mismatched dims, non-tiling windows
    /// given as runtime inputs, empty memory subsets, ...).
    Dim(String),
    /// Invalid configuration caught at construction/validation time.
    Config(String),
    /// A non-finite value appeared; `stage` names where.
    Numeric { stage: String },
    /// A probe evaluation failed (finite differences over a non-finite `f`).
    Eval(String),
    /// Malformed fixture bytes; `offset` is where decoding stopped making sense.
    Format { offset: usize, what: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dim(msg) => write!(f, "dimension error: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Numeric { stage } => write!(f, "numeric error: non-finite value in {stage}"),
            Error::Eval(msg) => write!(f, "evaluation error: {msg}"),
            Error::Format { offset, what } => {
                write!(f, "format error at byte {offset}: {what}")
            }
        }
    }
}

impl core::error::Error for Error {}

//! Error type shared by every module in the crate.

use alloc::string::String;
use core::fmt;

/// Errors produced by tensor arithmetic, training loops, sampling and
/// configuration validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CoreError {
    /// Operand shapes are incompatible for the named operation.
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    /// A value left the finite range (NaN or infinity) in the named operation.
    NonFinite { op: &'static str },
    /// An API contract was violated (non-scalar loss, mismatched layouts, ...).
    Contract(String),
    /// A configuration value is invalid or inconsistent.
    Config(String),
    /// A sampling precondition failed (class too small, not enough classes, ...).
    Sampling(String),
    /// A label or index is out of range.
    Index(String),
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::ShapeMismatch { op, lhs, rhs } => write!(
                f,
                "{op}: incompatible shapes {}x{} and {}x{}",
                lhs.0, lhs.1, rhs.0, rhs.1
            ),
            CoreError::NonFinite { op } => {
                write!(f, "{op}: non-finite value (NaN or infinity)")
            }
            CoreError::Contract(msg) => write!(f, "contract violation: {msg}"),
            CoreError::Config(msg) => write!(f, "invalid configuration: {msg}"),
            CoreError::Sampling(msg) => write!(f, "sampling error: {msg}"),
            CoreError::Index(msg) => write!(f, "index error: {msg}"),
        }
    }
}

impl core::error::Error for CoreError {}

pub type Result<T> = core::result::Result<T, CoreError>;

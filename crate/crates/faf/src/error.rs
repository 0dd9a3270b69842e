//! Error type shared across the crate.

use std::fmt;

#[derive(Debug)]
pub enum FafError {
    /// Shape or length mismatch between tensors. Carries both shapes.
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize>, context: String },
    /// A value that must stay finite went NaN or infinite.
    NonFinite { context: String },
    /// Bad input data (CSV parse problems, duplicate timestamps, ...).
    Data(String),
    /// Invalid configuration value.
    Config(String),
    /// Checkpoint serialization problems.
    Checkpoint(String),
    Io(std::io::Error),
}

impl fmt::Display for FafError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FafError::ShapeMismatch { expected, got, context } => {
                write!(f, "shape mismatch in {context}: expected {expected:?}, got {got:?}")
            }
            FafError::NonFinite { context } => write!(f, "non-finite value in {context}"),
            FafError::Data(msg) => write!(f, "data error: {msg}"),
            FafError::Config(msg) => write!(f, "config error: {msg}"),
            FafError::Checkpoint(msg) => write!(f, "checkpoint error: {msg}"),
            FafError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for FafError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            FafError::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for FafError {
    fn from(e: std::io::Error) -> Self {
        FafError::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, FafError>;

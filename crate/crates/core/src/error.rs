use std::io;

use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// Variants are grouped by the process exit code the command-line tool maps
/// them to: usage problems exit 1, data problems exit 2, numerical failures
/// exit 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("usage: {0}")]
    Usage(String),

    #[error("file not found: {0}")]
    FileNotFound(String),

    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("{msg} at line {line}")]
    Parse { line: usize, msg: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("{0}")]
    Data(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid symbol {symbol:?} in k-mer")]
    InvalidSymbol { symbol: char },

    #[error("read of length {len} is shorter than k = {k}")]
    ReadTooShort { len: usize, k: usize },

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },
}

impl Error {
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    /// Process exit code for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Numerical(_) | Error::Diverged { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("operation requires a two-layer conditional model")]
    UnsupportedArchitecture,

    #[error(
        "exact enumeration over 2^{latent} intermediate configurations exceeds the budget \
         (l <= {limit}); use the mcmc gradient mode instead"
    )]
    EnumerationBudget { latent: usize, limit: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("training diverged at conditional {k}, epoch {epoch}: {reason}")]
    Diverged { k: usize, epoch: usize, reason: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("corrupt data: {0}")]
    Corrupt(String),

    #[error("truncated input: {0}")]
    Truncated(String),

    #[error("checksum mismatch")]
    Checksum,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}

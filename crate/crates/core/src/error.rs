//! Error type shared by every module.
//!
//! Errors split into two families that map onto the CLI's exit codes:
//! validation problems (bad config, shape mismatches, corrupt files) exit
//! with code 1, numerical failures (non-finite values, zero-signal inputs,
//! training below its accuracy floor) exit with code 2.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("no signal: {0}")]
    NoSignal(String),

    #[error("training accuracy {achieved:.4} below configured floor {floor:.4}")]
    BelowAccuracyFloor { achieved: f64, floor: f64 },
}

impl Error {
    /// CLI exit code for this error: 1 for validation, 2 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_)
            | Error::DimensionMismatch { .. }
            | Error::Checkpoint(_)
            | Error::Io(_) => 1,
            Error::Numerical(_) | Error::NoSignal(_) | Error::BelowAccuracyFloor { .. } => 2,
        }
    }
}

//! Crate-wide error type.
//!
//! Errors split into two user-facing classes, mirrored by the CLI exit
//! codes: problems with what the user asked for (`Config`, `Invalid` — exit
//! code 1) and problems that arose while doing it (`Numerical`, `Io`,
//! `Checkpoint` — exit code 2).

use crate::checkpoint::CheckpointError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Config file could not be parsed or failed validation.
    #[error("config error: {0}")]
    Config(String),
    /// An operation was called with arguments outside its documented domain.
    #[error("invalid argument: {0}")]
    Invalid(String),
    /// A computation produced non-finite values.
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code the CLI maps this error to.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Invalid(_) => 1,
            Error::Numerical(_) | Error::Checkpoint(_) | Error::Io(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

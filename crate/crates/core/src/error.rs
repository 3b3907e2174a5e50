//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A record file could not be parsed. Carries the 1-based line number.
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// Two documents (or docids) share a key that must be unique.
    #[error("duplicate key '{0}'")]
    DuplicateKey(String),

    /// Invalid configuration: bad dimensions, enum values, missing files.
    #[error("configuration error: {0}")]
    Config(String),

    /// A train/validation split could not be formed.
    #[error("split error: {0}")]
    Split(String),

    /// A token id fell outside the model's (extended) vocabulary.
    #[error("token id {id} out of range (limit {limit})")]
    TokenOutOfRange { id: u32, limit: u32 },

    /// Training produced a non-finite loss.
    #[error("non-finite loss at step {step}: {value}")]
    NonFiniteLoss { step: usize, value: f64 },

    /// An operation received input it cannot evaluate.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A pipeline stage failed; wraps the underlying error with its stage name.
    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wrap an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit code contract: 1 for configuration errors, 2 for runtime errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse { .. } => 1,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("index out of range in {context}: {index} not in 1..={bound}")]
    Index {
        context: String,
        index: usize,
        bound: usize,
    },

    #[error("invalid model: {0}")]
    Model(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("training diverged at step {step}: loss is not finite")]
    Diverged { step: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(context: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::Shape {
            context: context.into(),
            expected,
            got,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("index out of range: {0}")]
    Range(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("bank format error at offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("unsupported bank version: {0}")]
    UnsupportedVersion(String),

    #[error("training diverged at step {step} (pair {pair}, lr {lr}): {detail}")]
    Divergence {
        step: usize,
        pair: usize,
        lr: f64,
        detail: String,
    },

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("advisor reply could not be parsed: {0}")]
    AdvisorParse(String),

    #[error("advisor unavailable: {0}")]
    AdvisorUnavailable(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

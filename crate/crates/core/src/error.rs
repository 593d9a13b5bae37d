use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("indexing error for {path}: {reason}")]
    Index { path: PathBuf, reason: String },

    #[error("unreadable image {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Distorted input came out identical to the ground truth; the caller should draw again.
    #[error("degenerate distortion sample (modified image equals original)")]
    Degenerate,

    #[error("distortion resample budget of {0} attempts exhausted")]
    ResampleExhausted(usize),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at step {step} (batch seed {batch_seed})")]
    NonFinite { step: u64, batch_seed: u64 },

    #[error("empty validation set")]
    EmptyValidation,

    #[error("{0}")]
    Metric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid pile spec: {0}")]
    InvalidPile(String),

    #[error("non-finite input to {what}: {value}")]
    NonFinite { what: &'static str, value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("backward called without a forward cache ({0})")]
    MissingCache(&'static str),

    #[error("pile pool has no entry with generation <= {max_generation}")]
    EmptyPool { max_generation: u32 },

    #[error("replay buffer holds {size} transitions, batch of {batch} requested")]
    BufferUnderfilled { size: usize, batch: usize },

    #[error("non-finite loss in {component} at update {update}: {diagnostics}")]
    NonFiniteLoss {
        component: &'static str,
        update: u64,
        diagnostics: String,
    },

    #[error("episode already finished; call reset_loading first")]
    EpisodeDone,

    #[error("loading still in progress")]
    LoadingInProgress,

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Bincode(#[from] bincode::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure_finite(what: &'static str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { what, value })
    }
}

use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the HTKG pipeline.
#[derive(Debug, Error)]
pub enum HtkgError {
    #[error("{file}:{line}: {msg}")]
    Parse { file: PathBuf, line: usize, msg: String },

    #[error("empty split: {0}")]
    EmptySplit(String),

    #[error("id overflow: {0}")]
    IdOverflow(String),

    #[error("duplicate vocabulary entry `{0}`")]
    DuplicateVocab(String),

    #[error("dataset is already inverse-augmented")]
    AlreadyAugmented,

    #[error("dataset must be inverse-augmented first")]
    NotAugmented,

    #[error("target proportion unreachable: {0}")]
    Unreachable(String),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("candidate {0} out of range")]
    CandidateOutOfRange(usize),

    #[error("ground truth {0} was removed by the filter")]
    TruthFiltered(usize),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("unmapped relations: {0:?}")]
    UnmappedRelations(Vec<String>),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("malformed response: {0}")]
    MalformedResponse(String),

    #[error("fixture missing for request {0}")]
    FixtureMissing(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, HtkgError>;

//! Crate-wide error type.

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no training data")]
    NoTrainingData,

    #[error("empty token")]
    EmptyToken,

    #[error("invalid token id {id} (vocabulary size {size})")]
    InvalidTokenId { id: usize, size: usize },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("row {row}: expected 2 columns")]
    MissingColumn { row: usize },

    #[error("row {row}: {msg}")]
    BadRecord { row: usize, msg: String },

    #[error("vocabulary file {path}: {msg}")]
    BadVocabFile { path: String, msg: String },

    #[error("ratio must be in (0,1)")]
    BadSplitRatio,

    #[error("need at least 2 pairs to split")]
    TooFewPairs,

    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("softmax: fully masked row {row}")]
    FullyMaskedRow { row: usize },

    #[error("no unmasked targets")]
    NoUnmaskedTargets,

    #[error("empty reference")]
    EmptyReference,

    #[error("line count mismatch: {pred} predictions vs {refs} references")]
    LineCountMismatch { pred: usize, refs: usize },

    #[error("unrendered word {0}")]
    UnrenderedWord(usize),

    #[error("not a checkpoint")]
    NotACheckpoint,

    #[error("unsupported checkpoint version {0}")]
    CheckpointVersion(u8),

    #[error("checkpoint shape mismatch for {name}: header {header:?}, expected {expected:?}")]
    CheckpointShape {
        name: String,
        header: Vec<usize>,
        expected: Vec<usize>,
    },

    #[error("truncated checkpoint")]
    TruncatedCheckpoint,

    #[error("diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

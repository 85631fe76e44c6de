//! Error types shared across the pipeline.

use std::fmt;

/// Pipeline stage used to tag errors surfaced by end-to-end operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Index,
    Retrieve,
    Prompt,
    Generate,
    Evaluate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Index => "index",
            Stage::Retrieve => "retrieve",
            Stage::Prompt => "prompt",
            Stage::Generate => "generate",
            Stage::Evaluate => "evaluate",
        };
        f.write_str(name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unsupported language `{0}`: no grammar registered")]
    UnsupportedLanguage(String),

    #[error("empty input: code is empty or whitespace-only")]
    EmptyInput,

    #[error("embedding service unavailable: {0}")]
    ServiceUnavailable(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("zero vector: similarity is undefined against an all-zero vector")]
    ZeroVector,

    #[error("index is empty: {0}")]
    IndexEmpty(String),

    #[error("index missing or unreadable at `{0}`")]
    IndexMissing(String),

    #[error("invalid index file: {0}")]
    IndexFormat(String),

    #[error("empty target: nothing to repair")]
    EmptyTarget,

    #[error("empty sequence: metric is undefined on empty token lists")]
    EmptySequence,

    #[error("parse failure: {0}")]
    ParseFailure(String),

    #[error("generation backend unavailable: {0}")]
    BackendUnavailable(String),

    #[error("generation backend contract violation: {0}")]
    BackendContract(String),

    #[error("file not found: `{0}`")]
    FileNotFound(String),

    #[error("no valid rows in `{0}`")]
    AllRowsInvalid(String),

    #[error("insufficient records: need {needed}, have {available}")]
    InsufficientRecords { needed: usize, available: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid vector: {0}")]
    InvalidVector(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wrap an error with the pipeline stage it came from.
    pub fn at_stage(self, stage: Stage) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// The stage tag, if this error has been wrapped by [`Error::at_stage`].
    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

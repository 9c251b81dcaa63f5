use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum GenRecError {
    #[error("empty catalog")]
    EmptyCatalog,
    #[error("level {level} asks for {k} centroids but only {n} items are available")]
    InsufficientItems { level: usize, k: usize, n: usize },
    #[error("invalid embedding: {0}")]
    InvalidEmbedding(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("code {code} out of range at level {level} (size {size})")]
    InvalidCode { level: usize, code: u32, size: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("prompt needs {positions} positions, budget is {max}")]
    PromptTooLong { positions: usize, max: usize },
    #[error("sequence needs {positions} response positions, budget is {max}")]
    SequenceTooLong { positions: usize, max: usize },
    #[error("token {token} at response position {position} is outside its level segment")]
    LevelViolation { position: usize, token: u32 },
    #[error("numerical error: {0}")]
    NumericalError(String),
    #[error("reward {value} at candidate {index} is outside [0, 1]")]
    InvalidReward { index: usize, value: f64 },
    #[error("no evaluation records")]
    EmptyEval,
    #[error("missing artifact {} from stage `{stage}`", path.display())]
    MissingArtifact { stage: String, path: PathBuf },
    #[error("stale pipeline: {0}")]
    StalePipeline(String),
    #[error("malformed input: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GenRecError>;

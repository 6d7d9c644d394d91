use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),

    #[error("scene validation failed: {field}: {reason}")]
    SceneValidation { field: String, reason: String },

    #[error("placement failed after {attempts} rejection attempts; parameters overcrowd the surface")]
    PlacementFailure { attempts: usize },

    #[error("shape mismatch at layer {layer} ({kind}): expected {expected}, found {found}")]
    ShapeMismatch {
        layer: usize,
        kind: String,
        expected: String,
        found: String,
    },

    #[error("feature arity mismatch: encoder built for {expected} objects, world has {found}")]
    ArityMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("weight file corrupt: {0}")]
    CorruptWeights(String),

    #[error("weight file mismatch: expected {expected}, found {found}")]
    WeightMismatch { expected: String, found: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing checkpoint for {0}")]
    MissingCheckpoint(String),

    #[error("demo file error: {0}")]
    DemoFile(String),

    #[error("invalid start state: {0}")]
    InvalidStart(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

use thiserror::Error;

/// Errors produced by the pruning engine.
#[derive(Debug, Error)]
pub enum PfbError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("centroid set is not initialized")]
    Uninitialized,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("every sample in the batch was pruned")]
    EmptySubset,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: u64 },

    #[error("checkpoint version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: String, found: String },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint schema violation: {0}")]
    SchemaViolation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PfbError>;

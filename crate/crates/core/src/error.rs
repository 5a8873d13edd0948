use thiserror::Error;

/// Errors from the model, workload, analytics and simulator layers.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("no granularity entry for analysis type {0}")]
    MissingGranularity(String),

    #[error("slot list is empty")]
    EmptySlots,

    #[error("invalid trace at event {index}: {reason}")]
    InvalidTrace { index: usize, reason: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

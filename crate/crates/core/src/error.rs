use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid pulse schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid frame spec: {0}")]
    InvalidFrame(String),

    #[error("bit sequence is empty")]
    EmptyBits,

    #[error("no preamble onset found in trace")]
    SyncNotFound,

    #[error("trace too short: {available} complete symbols available, {requested} requested")]
    TraceTooShort { available: usize, requested: usize },

    #[error("window has {0} samples, at least 8 are needed")]
    WindowTooShort(usize),

    #[error("training set needs at least one example of each class")]
    DegenerateTraining,

    #[error("SVM solver hit the {iterations}-update cap with KKT violation {violation:.3e}")]
    NoConvergence { iterations: usize, violation: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty sequence")]
    EmptySequence,

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("no {detector} model for the {interval_ms} ms interval")]
    MissingModel { detector: String, interval_ms: u32 },

    #[error("dataset split: {0}")]
    Split(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

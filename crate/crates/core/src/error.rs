use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum QanaError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error("{op} requires a non-empty batch")]
    EmptyBatch { op: &'static str },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("classes {classes:?} have fewer than k+1 = {needed} samples")]
    ClassTooSmall { classes: Vec<usize>, needed: usize },

    #[error("unsupported layer `{name}` of kind {kind}")]
    UnsupportedLayer { name: String, kind: String },

    #[error("calibration set is empty")]
    EmptyCalibration,

    #[error("membrane of population {population} could overflow 64 bits within {window} steps")]
    Overflow { population: usize, window: usize },

    #[error("cannot decode image {path}: {reason}")]
    Decode { path: String, reason: String },

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = QanaError> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> QanaError {
    QanaError::Shape {
        op,
        detail: detail.into(),
    }
}

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DscError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("feature dimension {dim} is too small for {classes} classes (need at least {})", .classes.saturating_sub(1))]
    DimensionTooSmall { classes: usize, dim: usize },

    #[error("label {label} out of range for {num_classes} classes")]
    InvalidLabel { label: usize, num_classes: usize },

    #[error("shape mismatch at {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid state: {0}")]
    State(String),

    #[error("cosine similarity undefined for a zero-norm feature")]
    UndefinedDirection,

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("IDX format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = DscError> = std::result::Result<T, E>;

pub(crate) fn shape_err(context: impl Into<String>, expected: usize, actual: usize) -> DscError {
    DscError::Shape {
        context: context.into(),
        expected,
        actual,
    }
}

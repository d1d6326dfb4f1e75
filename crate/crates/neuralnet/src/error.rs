use thiserror::Error;

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {layer}: expected {expected:?}, got {got:?}")]
    Shape {
        layer: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("optimizer step before backward: parameter {0} has no gradient")]
    NoGradient(usize),

    #[error("degenerate input: zero variance in loss target or prediction")]
    Degenerate,

    #[error("non-finite loss in epoch {epoch}")]
    NonFinite { epoch: usize },

    #[error("data loader failed: {0}")]
    Data(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn shape_err(layer: impl Into<String>, expected: &[usize], got: &[usize]) -> NnError {
    NnError::Shape {
        layer: layer.into(),
        expected: expected.to_vec(),
        got: got.to_vec(),
    }
}

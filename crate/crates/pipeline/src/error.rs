use std::path::PathBuf;

use thiserror::Error;

use crate::idx::IdxError;

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: speckle_core::Error,
    },

    #[error(transparent)]
    Core(#[from] speckle_core::Error),

    #[error(transparent)]
    Idx(#[from] IdxError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("{stage}: non-finite loss in epoch {epoch}")]
    NonFinite { stage: String, epoch: usize },

    #[error("{0}")]
    Nn(speckle_nn::NnError),
}

impl From<speckle_nn::NnError> for PipelineError {
    fn from(e: speckle_nn::NnError) -> Self {
        match e {
            speckle_nn::NnError::NonFinite { epoch } => PipelineError::NonFinite {
                stage: "training".into(),
                epoch,
            },
            speckle_nn::NnError::Config(msg) => PipelineError::Config(msg),
            other => PipelineError::Nn(other),
        }
    }
}

impl PipelineError {
    /// Process exit code: 2 configuration, 3 data, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::NonFinite { .. } => 4,
            PipelineError::Nn(speckle_nn::NnError::Shape { .. }) => 2,
            _ => 3,
        }
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> PipelineError {
    let path = path.into();
    move |source| PipelineError::Io { path, source }
}

pub(crate) fn file_err(path: impl Into<PathBuf>) -> impl FnOnce(speckle_core::Error) -> PipelineError {
    let path = path.into();
    move |source| PipelineError::File { path, source }
}

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Tensor(#[from] molsyn_autodiff::TensorError),
    #[error(transparent)]
    Chem(#[from] molsyn_chem::ChemError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("routing error: {0}")]
    Routing(String),
    #[error("malformed model output ({reason}): {raw:?}")]
    MalformedOutput { reason: String, raw: String },
    #[error("input of {len} tokens exceeds the maximum sequence length {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("data error: {0}")]
    Data(String),
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("chat transport error: {0}")]
    Transport(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CoreError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CoreError::Io {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;

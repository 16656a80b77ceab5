use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Tensor(#[from] expnet_core::TensorError),

    #[error(transparent)]
    Model(#[from] expnet_model::ModelError),

    #[error("invalid run config: {0}")]
    Config(String),

    #[error("dataset {path}: {detail}")]
    Dataset { path: String, detail: String },

    #[error("non-finite loss at batch {batch} of epoch {epoch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("{0}")]
    Invalid(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl TrainError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        TrainError::Invalid(msg.into())
    }

    pub fn dataset(path: impl Into<String>, detail: impl Into<String>) -> Self {
        TrainError::Dataset { path: path.into(), detail: detail.into() }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        TrainError::Io { path: path.as_ref().display().to_string(), source }
    }
}

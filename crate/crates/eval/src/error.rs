use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty mask")]
    EmptyMask,

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Tensor(#[from] expnet_core::TensorError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl EvalError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        EvalError::Invalid(msg.into())
    }
}

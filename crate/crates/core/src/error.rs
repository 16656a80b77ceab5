use thiserror::Error;

/// Errors raised by tensor construction, tape operations, and tensor file I/O.
#[derive(Debug, Error)]
pub enum TensorError {
    /// Incompatible extents between operands. The message names the offending axis.
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// An argument violated an operation precondition.
    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    /// A NaN or infinity was detected where finite values are required.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// A tensor from a different (or no) tape was passed to a tape operation.
    #[error("tensor does not belong to this tape ({context})")]
    TapeMismatch { context: &'static str },

    /// Backward requested on an unsuitable node.
    #[error("backward rejected: {0}")]
    Backward(String),

    #[error("tensor file {path}: {detail}")]
    FileFormat { path: String, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl TensorError {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::ShapeMismatch { op, detail: detail.into() }
    }

    pub fn arg(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::InvalidArgument { op, detail: detail.into() }
    }
}

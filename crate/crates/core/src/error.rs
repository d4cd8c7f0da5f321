use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is numerically singular (smallest pivot {smallest_pivot:e})")]
    SingularMatrix { smallest_pivot: f64 },

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("image {index} has all-zero pixels and cannot be normalized")]
    ZeroImage { index: usize },

    #[error("class {class} has fewer than two samples")]
    InsufficientData { class: i64 },

    #[error("training diverged at step {step}")]
    Divergence { step: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

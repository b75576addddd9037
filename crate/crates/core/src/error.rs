use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("expected an RGB image, got {0}")]
    NotRgb(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument `{arg}`: {reason}")]
    InvalidArgument { arg: &'static str, reason: String },

    #[error("image of {height}x{width} is smaller than the {window}x{window} window")]
    ImageTooSmall {
        height: usize,
        width: usize,
        window: usize,
    },

    #[error("channel selector is empty")]
    EmptySelector,

    #[error("zero-norm vector passed to cosine similarity")]
    ZeroNorm,

    #[error("malformed feature data: {0}")]
    MalformedFeatures(String),

    #[error("malformed tensor container: {0}")]
    MalformedContainer(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] ::image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(arg: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            arg,
            reason: reason.into(),
        }
    }
}

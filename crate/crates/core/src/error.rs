use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("spatial size {height}x{width} is not divisible by {factor}; pad to {padded_height}x{padded_width}")]
    Divisibility {
        height: usize,
        width: usize,
        factor: usize,
        padded_height: usize,
        padded_width: usize,
    },

    #[error("index {index} out of range 0..{len}")]
    OutOfRange { index: usize, len: usize },

    #[error("image too small: {0}")]
    TooSmall(String),

    #[error("caption does not fit in the frame: {0}")]
    CaptionTooLarge(String),

    #[error("corrupt archive {path}: {reason}")]
    CorruptArchive { path: PathBuf, reason: String },

    #[error("model config mismatch: checkpoint has {found}, expected {expected}")]
    ConfigMismatch { expected: String, found: String },

    #[error("manifest at {path} was written with seed {existing}, refusing to overwrite with seed {requested}")]
    ManifestCollision {
        path: PathBuf,
        existing: u64,
        requested: u64,
    },

    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: u64, loss: f64 },

    #[error("missing data: {0}")]
    Missing(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("png {path}: {reason}")]
    Png { path: PathBuf, reason: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

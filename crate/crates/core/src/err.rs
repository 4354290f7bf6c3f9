use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("pose interpolation undefined: relative rotation angle is pi")]
    InterpolationUndefined,
    #[error("unknown timestamp {0}")]
    UnknownTimestamp(u32),
    #[error("subframe index {index} out of range 1..={count}")]
    SubframeOutOfRange { index: usize, count: usize },
    #[error("non-finite splat passed to rasterizer (splat {0})")]
    NonFiniteSplat(usize),
    #[error("backward called without a recorded forward pass")]
    NoForwardPass,
    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("image {0}x{1} too small for an 11x11 window")]
    ImageTooSmall(usize, usize),
    #[error("missing observation for timestamp {0}")]
    MissingObservation(u32),
    #[error("non-finite loss at epoch {epoch}, frame {frame}")]
    NonFiniteLoss { epoch: usize, frame: u32 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("{path}: format version {found}, this build reads version {expected}")]
    Version { path: PathBuf, found: u32, expected: u32 },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format { path: path.into(), reason: reason.into() }
    }
}

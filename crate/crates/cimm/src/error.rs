//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor or parameter shapes do not line up.
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    /// A convolution that would produce an empty output.
    #[error("non-positive output size: input {h}x{w} with padding {padding}, dilation {dilation}, kernel {kernel}")]
    EmptyOutput {
        h: usize,
        w: usize,
        padding: usize,
        dilation: usize,
        kernel: usize,
    },

    /// Input channel count does not match what the network was built for.
    #[error("channel mismatch: network expects {expected} channel(s), input has {got}")]
    ChannelMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Forward cache does not belong to the network/input it is used with.
    #[error("stale activation cache: {0}")]
    StaleCache(String),

    #[error("unsupported image format: {0}")]
    Format(String),

    #[error("image {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("image is {h}x{w}, smaller than requested size {size}")]
    ImageTooSmall { h: usize, w: usize, size: usize },

    #[error("dataset is empty: {0}")]
    EmptyDataset(PathBuf),

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    /// Estimated working-set size exceeds the caller-supplied limit.
    #[error("inference needs about {required} bytes, limit is {limit}")]
    MemoryLimit { required: usize, limit: usize },

    /// Training produced a NaN/Inf loss; carries the step for diagnosis.
    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            expected: expected.into(),
            got: got.into(),
        }
    }
}

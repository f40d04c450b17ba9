//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Scene rendering produced a non-positive intensity or the scene
    /// description is unusable.
    #[error("invalid scene: {0}")]
    InvalidScene(String),

    /// An operation needs more input than was provided (e.g. fewer than two
    /// frames for event emission).
    #[error("insufficient input: {0}")]
    InsufficientInput(String),

    /// An event stream violated the (t, y, x, p) sort order.
    #[error("unsorted event stream at index {0}")]
    UnsortedStream(usize),

    /// A crop window does not fit inside the frame.
    #[error("invalid crop: {0}")]
    InvalidCrop(String),

    /// Tensor shapes are incompatible for an operation. Both shapes are
    /// included in the message.
    #[error("shape mismatch in {op}: {details}")]
    Shape { op: &'static str, details: String },

    /// Backward was requested on a non-scalar value.
    #[error("loss is not a scalar, shape {0}")]
    NotScalar(String),

    /// Quantizer bit width outside 1..=8.
    #[error("invalid bits: {0} (expected 1..=8)")]
    InvalidBits(u8),

    /// A configuration is internally inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// Recurrent state does not match the network that produced it.
    #[error("state mismatch: {0}")]
    State(String),

    /// A training run was given no sequences.
    #[error("empty dataset")]
    EmptyDataset,

    /// An operation that must produce output received empty input.
    #[error("empty output: {0}")]
    EmptyOutput(String),

    /// An evaluation mask selected zero pixels.
    #[error("no evaluated pixels")]
    NoEvaluatedPixels,

    /// Counts and ground truths are not time-aligned.
    #[error("alignment error: {0}")]
    Alignment(String),

    /// Training produced NaN or infinite values.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A binary file is malformed or carries the wrong magic/version.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

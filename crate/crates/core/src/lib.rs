//! Temporally dense optical flow estimation from event-camera streams.
//!
//! The pipeline runs end to end at desk scale: a synthetic scene renderer and
//! DVS-style event emulator ([`events`]), per-interval event-count encoding and
//! sequence assembly ([`encoding`]), a small define-by-run autodiff engine
//! ([`autodiff`]), convolutional LSTM and multi-bit spiking cells ([`layers`]),
//! an encoder-decoder flow network ([`model`]), windowed-BPTT training
//! ([`training`]), and continuous-stream evaluation with sparsity-aware
//! multiply counting ([`eval`]).

pub mod autodiff;
pub mod encoding;
pub mod error;
pub mod eval;
pub mod events;
pub mod flow;
pub mod layers;
pub mod model;
pub mod training;
pub mod viz;

pub use autodiff::{Scalar, Tape, Tensor, Var};
pub use encoding::{CountFrame, TrainingSequence};
pub use error::{Error, Result};
pub use events::{CameraModel, EventRecord, EventStream, IntensityFrame, Motion, Pattern, Scene};
pub use flow::FlowField;
pub use layers::{CellKind, LayerState};
pub use model::{Network, NetworkConfig};
pub use training::{TrainConfig, TrainMode};



//! Streaming sequence layers with identical layer-wise and step-wise
//! execution.

pub mod error;
pub mod exec;
pub mod sequence;
pub mod tensor;

pub use error::{Error, Result};
pub use layer::{BuildCtx, Constants, Emits, Layer, LayerProperties, State};
pub use sequence::{ChannelSpec, Sequence};
pub use tensor::{DType, Scalar, Tensor, TensorData};
pub mod layer;
pub mod layers;
pub mod combinators;
pub mod verify;
pub mod config;

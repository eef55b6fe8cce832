//! Core library: a small dense-tensor autodiff engine, pinhole camera
//! geometry, an alternating-attention multi-view backbone with an
//! auxiliary-input adapter, stochastic modality sampling, training losses,
//! evaluation metrics, and a deterministic synthetic-scene generator.

pub mod adapter;
pub mod backbone;
pub mod bundle;
pub mod dtype;
pub mod fusion;
pub mod geometry;
pub mod loss;
pub mod metrics;
pub mod synth;
pub mod tensor;

pub use dtype::Real;
pub use tensor::{Parameter, Tensor, TensorError};

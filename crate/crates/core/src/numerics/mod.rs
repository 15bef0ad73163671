//! Differentiable sequence operators in 64-bit arithmetic.

pub mod ops;
mod tape;
mod tensor;

pub use ops::{avgpool1d, conv1d, layer_norm, maxpool1d, relu, self_attention, subsample, Window, LAYER_NORM_EPS};
pub use tape::{GradTape, Gradients, NodeId};
pub use tensor::SeqTensor;

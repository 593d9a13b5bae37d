//! Minimal CPU tensor engine for the autoencoder: NCHW tensors, convolution kernels,
//! layers with hand-written backward passes, and the Adam optimizer.

pub mod layers;
pub mod ops;
pub mod optim;
pub mod tensor;

pub use optim::{Adam, AdamConfig};
pub use tensor::{Param, Tensor};

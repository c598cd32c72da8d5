//! Dense and convolutional layer arithmetic with reverse-mode gradients,
//! plus the Adam optimizer used to train the autoencoder.

mod adam;
mod layer;
pub mod ops;
mod params;
mod real;
mod sequential;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use layer::LayerSpec;
pub use ops::{conv2d, conv_transpose2d, linear, relu};
pub use params::ParamStore;
pub use real::Real;
pub use sequential::{Layer, Sequential, Tape};
pub use tensor::Tensor;

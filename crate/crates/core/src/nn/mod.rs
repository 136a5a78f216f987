//! Minimal reverse-mode engine for single-sample 3D convolutional networks.
//!
//! Activations are channel-first `f32` grids. A [`Graph`] records every
//! operation of one forward pass and replays them backwards to accumulate
//! parameter gradients.

mod adam;
mod conv;
mod graph;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use conv::{conv3d_backward, conv3d_forward, ConvLayer, ConvGrad, KERNEL_VOLUME};
pub use graph::{Graph, NodeId};
pub use tensor::Tensor;

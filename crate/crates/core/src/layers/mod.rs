//! Forward/backward pairs for every layer primitive of the conv-block network.
//!
//! Each `*_forward` returns a [`LayerIo`] whose cache must be handed back to the
//! matching `*_backward` together with the upstream gradient.

mod conv;
mod dense;
mod dropout;
mod loss;
mod pool;
mod relu;

pub use conv::{conv2d_backward, conv2d_forward, Conv2dCache, Conv2dGrads};
pub use dense::{dense_backward, dense_forward, DenseCache, DenseGrads};
pub use dropout::{dropout_backward, dropout_forward, DropoutCache};
pub use loss::softmax_cross_entropy;
pub use pool::{maxpool2d_backward, maxpool2d_forward, MaxPoolCache};
pub use relu::{relu_backward, relu_forward, ReluCache};

use crate::tensor::Tensor;

/// Output of a forward pass plus what the backward pass needs.
#[derive(Clone, Debug)]
pub struct LayerIo<T, C> {
    pub output: Tensor<T>,
    pub cache: C,
}

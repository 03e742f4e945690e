//! Urban tree-species classification toolkit: a dataset generator that turns a
//! municipal tree inventory into labelled aerial tiles, a from-scratch CNN
//! built from stacked conv blocks, seven first-order optimizers, and the
//! train / evaluate / cross-validate / sweep protocol around them.
//!
//! Numerics are generic over [`Scalar`]; training uses `f32` and gradient
//! checks use `f64`. The `*32` / `*64` aliases below name the concrete forms.

pub mod augment;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod init;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::SeedStream;
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type ModelParams32 = model::ModelParams<f32>;
pub type ModelParams64 = model::ModelParams<f64>;
pub type Checkpoint32 = checkpoint::Checkpoint<f32>;
pub type OptimizerState32 = optim::OptimizerState<f32>;
pub type OptimizerState64 = optim::OptimizerState<f64>;
pub type Dataset32 = train::Dataset<f32>;

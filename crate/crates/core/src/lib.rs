pub mod checkpoint;
pub mod encoder;
pub mod error;
pub mod goals;
pub mod metrics;
pub mod predictor;
pub mod scalar;
pub mod scene;
pub mod synth;
pub mod tensor;
pub mod trainer;
pub mod viz;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Model64 = predictor::Model<f64>;
pub type Model32 = predictor::Model<f32>;
pub type Checkpoint64 = checkpoint::Checkpoint<f64>;
pub type Checkpoint32 = checkpoint::Checkpoint<f32>;

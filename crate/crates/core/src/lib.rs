//! Multimodal quasi-autoregressive popularity forecasting for products
//! without a sales or interaction history of their own.

pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod pipeline;
pub mod scalar;
pub mod series;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;

pub use model::{Model32, Model64, MuqarModel};

//! Wavelet token-mixing image classifier.
//!
//! The crate builds, trains and evaluates compact image classifiers whose
//! spatial mixing is a fixed multi-level 2D Haar wavelet transform
//! interleaved with learnable convolutions. Everything numeric is generic
//! over the scalar type: f32 for training, f64 for gradient checking and
//! independent oracles.

pub mod data;
pub mod dwt;
pub mod error;
pub mod model;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub mod baselines;
pub mod blocks;

pub use error::{Error, Result};
pub use rng::DetRng;
pub use scalar::Scalar;
pub use tensor::{concat_channels, grad_check, set_finite_check, Tensor};

/// Training-precision tensor.
pub type Tensor32 = Tensor<f32>;
/// Verification-precision tensor.
pub type Tensor64 = Tensor<f64>;

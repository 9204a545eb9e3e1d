//! Multiplication-free neural networks for gas-sensor time series.
//!
//! The crate builds classifiers around an additive "md" operator that
//! replaces multiplications inside dense and 1-d convolutional layers with
//! sign logic and additions, which makes inference cheap on small devices.
//! On top of that sit:
//!
//! - a layer zoo (regular and md dense/conv1d, pooling, batch norm, dropout)
//!   with manual backpropagation and RMSProp training,
//! - a GAN-discriminator classifier for heavily unbalanced data,
//! - magnitude pruning with sign retention plus int8 quantized inference,
//! - loaders and generators for three gas-sensing tasks (synthetic infrared
//!   leak detection, dynamic gas mixtures, long-term sensor drift batches),
//! - an `addnet` CLI wiring those pieces into reproducible experiments.
//!
//! Everything is seeded through [`rng::Rng`]; identical seeds give
//! byte-identical artifacts.

pub mod compress;
pub mod data;
pub mod error;
pub mod gan;
pub mod layers;
pub mod mdop;
pub mod metrics;
pub mod model_io;
pub mod presets;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod training;

pub mod cli;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;

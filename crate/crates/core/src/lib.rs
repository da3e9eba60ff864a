//! Learning image classifiers under class-conditional label noise.
//!
//! The crate is organised around the pipeline it supports:
//!
//! - [`noise`]: transition matrices and seeded label-noise injection
//! - [`nn`]: a small convolutional network with manual backpropagation,
//!   Adam, early stopping, checkpoints and a fast-gradient-sign probe
//! - [`losses`]: cross-entropy, NLL, importance-reweighted and
//!   backward-corrected losses
//! - [`estimation`]: transition-matrix estimation from a trained classifier
//! - [`data`]: datasets, normalisation, splits, synthetic data, the NLDS format
//! - [`metrics`]: confusion matrices, macro metrics, aggregation, growth rates
//! - [`harness`]: the experiment driver and the command-line front end
//!
//! All arithmetic is `f64`. Every random choice flows from an explicit seed.

pub mod data;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod noise;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;

//! A small convolutional network with hand-written backpropagation.

pub mod adam;
pub mod checkpoint;
pub mod fgsm;
mod gemm;
pub mod layer;
pub mod model;
pub mod train;

pub use adam::{AdamConfig, AdamState};
pub use fgsm::{fgsm, fgsm_example};
pub use layer::{Layer, LayerSpec, Shape};
pub use model::{Architecture, ForwardCache, Gradients, Model};
pub use train::{
    evaluate_loss, evaluate_score, train, train_with_validation, EpochRecord, History, TrainConfig,
};

//! Optimizers, schedules, sampling and the deterministic training loop.

mod config;
mod optim;
mod sampling;
mod trainer;

use thiserror::Error;

use crate::graph::GraphError;
use crate::imaging::ImagingError;
use crate::layers::LayerError;

pub use config::{LossKind, TrainConfig};
pub use optim::{adam_step, sgd_step, step_lr, Optimizer, OptimizerState};
pub use sampling::{apply_wgn, noisy_image, sample_crop, stream_rng};
pub use trainer::{
    batch_loss, denoise_validation_mse, lab_tensors, loss_curve_csv, make_batch, train_loop, usable_images,
    ycbcr_tensors, Batch, LossPoint, Objective, Progress, Target, Task, TrainOutcome,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("parameter, gradient and optimizer buffer shapes disagree")]
    ShapeMismatch,
    #[error("image {width}x{height} is smaller than crop {crop}")]
    ImageTooSmall { width: usize, height: usize, crop: usize },
    #[error("no training images at least {crop}x{crop}")]
    NoUsableImages { crop: usize },
    #[error("loss became {loss} at iteration {iteration}; lower the learning rate")]
    NonFinite { iteration: u64, loss: f64 },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

//! Differentiable layer primitives. Every forward has a matching `*_backward` that returns
//! exact gradients for the stated forward computation.

pub mod batchnorm;
pub mod concat;
pub mod conv;
pub mod gradcheck;
pub mod loss;
pub mod pool;
pub mod upsample;

mod activation;

use thiserror::Error;

pub use activation::{relu, relu_backward};
pub use batchnorm::{batchnorm2d, batchnorm2d_backward, BatchNormCache, BatchNormParams};
pub use concat::{concat_channels, split_channels};
pub use conv::{conv2d, conv2d_backward, deconv2d, deconv2d_backward, ConvGrads, ConvParams};
pub use gradcheck::{finite_diff_check, Differentiable, GradCheckReport};
pub use loss::{mse_loss, weighted_softmax_ce_loss};
pub use pool::{maxpool2d, maxpool2d_backward, maxunpool2d, maxunpool2d_backward, PoolSwitches};
pub use upsample::{bilinear_upsample2x, bilinear_upsample2x_backward};

/// Batch-norm behaviour: batch statistics while training, running statistics otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayerError {
    #[error("expected {expected} input channels, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("kernel {kernel:?} larger than padded input {padded:?}")]
    KernelTooLarge { kernel: (usize, usize), padded: (usize, usize) },
    #[error("layer would produce an empty output")]
    EmptyOutput,
    #[error("stride must be positive")]
    InvalidStride,
    #[error("max pooling needs even spatial dims, got {h}x{w}")]
    OddSpatial { h: usize, w: usize },
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: [usize; 4], got: [usize; 4] },
    #[error("batch norm evaluated before any running statistics were recorded")]
    BatchNormUninitialized,
    #[error("label {label} outside [0, {classes})")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid parameters: {0}")]
    BadParams(String),
}

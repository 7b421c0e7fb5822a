//! RBDN graph construction, execution, ablation and checkpointing.

mod builder;
mod checkpoint;
mod config;
mod gradsuite;
mod network;

use thiserror::Error;

use crate::layers::LayerError;

pub use builder::{ablate, build_b0, build_branch, build_rbdn};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{parse_key_values, RbdnConfig, Variant, MAX_BRANCHES};
pub use gradsuite::{gradient_suite, suite_network_config, SUITE_COMPONENTS, SUITE_STEP, SUITE_TOLERANCE};
pub use network::{reflect_pad, GraphLayer, NetworkGraph, Node, NodeId, NodeKind, NodeSummary, Op, Padding, Trace};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error("input {h}x{w} is not divisible by {factor}; enable padding or resize")]
    NotDivisible { h: usize, w: usize, factor: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("malformed graph: {0}")]
    Structure(String),
    #[error("branch index {k} outside 1..={n}")]
    BranchOutOfRange { k: usize, n: usize },
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

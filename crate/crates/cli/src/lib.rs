//! Command-line harness for RBDN: training, inference, PSNR evaluation, gradient checks and ablations.

// NaN-rejecting range checks are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ablation;
pub mod commands;
pub mod config;
mod error;
pub mod tasks;

pub use error::{CliError, ExitCode};

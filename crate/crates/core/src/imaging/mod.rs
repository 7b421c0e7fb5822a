//! 8-bit images, PNM I/O, color spaces, ab quantization, PSNR and dataset ingestion.

mod color;
mod dataset;
mod image;
mod metrics;
mod pnm;
mod quantizer;
mod synthetic;

use std::path::PathBuf;

use thiserror::Error;

pub use color::{lab_to_rgb, lab_to_srgb, rgb_to_lab, rgb_to_ycbcr, srgb_to_lab, ycbcr_to_rgb, Planes, LAB_WHITE};
pub use dataset::{scan_dataset, Dataset, Skipped};
pub use image::Image;
pub use metrics::{mse_u8, psnr, psnr_from_mse, PSNR_CAP};
pub use pnm::{decode_pnm, encode_pnm, read_pnm, write_pnm};
pub use quantizer::{annealed_mean_decode, build_ab_quantizer, encode_ab, AbQuantizer, AB_GRID, EXPECTED_BINS};
pub use synthetic::{toy_image, write_toy_dataset};

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed PNM: {0}")]
    Format(String),
    #[error("truncated PNM payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("unsupported PNM maxval {0} (only 255)")]
    UnsupportedMaxval(u32),
    #[error("expected a {expected}-channel image, got {got} channels")]
    Channels { expected: usize, got: usize },
    #[error("image dims differ: {a:?} vs {b:?}")]
    DimensionMismatch { a: (usize, usize, usize), b: (usize, usize, usize) },
    #[error("sample count {got} does not match {width}x{height}x{channels}")]
    SampleCount { width: usize, height: usize, channels: usize, got: usize },
    #[error("ab gamut sweep produced {got} bins, expected {expected}")]
    QuantizerCount { got: usize, expected: usize },
    #[error("invalid probabilities: {0}")]
    Probabilities(String),
    #[error("annealing temperature must be positive, got {0}")]
    Temperature(f64),
    #[error("no usable images in {dir} ({skipped} skipped)")]
    EmptyDataset { dir: PathBuf, skipped: usize },
}

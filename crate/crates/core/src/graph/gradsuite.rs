//! Finite-difference checks over every layer type and a small end-to-end network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::layers::gradcheck::{
    well_separated, BatchNormLayer, BilinearLayer, ConcatLayer, ConvLayer, DeconvLayer, MaxPoolLayer, MaxUnpoolLayer,
    MseLayer, ReluLayer, SoftmaxCeLayer,
};
use crate::layers::{finite_diff_check, maxpool2d, BatchNormParams, ConvParams, Differentiable, GradCheckReport};
use crate::tensor::Tensor;

use super::{build_rbdn, GraphError, GraphLayer, RbdnConfig};

/// Central-difference step used by the suite.
pub const SUITE_STEP: f64 = 1e-5;
/// Pass threshold on the maximum relative error.
pub const SUITE_TOLERANCE: f64 = 1e-4;

/// Names accepted by [`gradient_suite`]'s selector, in run order.
pub const SUITE_COMPONENTS: &[&str] = &[
    "conv2d",
    "conv2d-strided",
    "deconv2d",
    "deconv2d-strided",
    "maxpool2d",
    "maxunpool2d",
    "bilinear_upsample2x",
    "relu",
    "batchnorm2d",
    "concat_channels",
    "mse_loss",
    "weighted_softmax_ce_loss",
    "rbdn-k1",
];

fn uniform(shape: [usize; 4], rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn conv_params(weight: [usize; 4], bias: usize, rng: &mut impl Rng) -> ConvParams<f64> {
    ConvParams { weight: uniform(weight, rng), bias: (0..bias).map(|_| rng.gen_range(-0.5..0.5)).collect() }
}

/// The K = 1 network of the suite: 3 channels, 3×3 kernels, two transform layers.
pub fn suite_network_config() -> RbdnConfig {
    RbdnConfig { branches: 1, patch_kernel: 3, channels: 3, depth: 2, ..Default::default() }
}

fn case(name: &str, rng: &mut ChaCha8Rng) -> Result<(Box<dyn Differentiable>, Tensor<f64>), GraphError> {
    Ok(match name {
        "conv2d" => {
            let layer = ConvLayer { params: conv_params([3, 2, 3, 3], 3, rng), stride: 1, pad: 1 };
            (Box::new(layer), uniform([2, 2, 5, 4], rng))
        }
        "conv2d-strided" => {
            let layer = ConvLayer { params: conv_params([2, 2, 3, 3], 2, rng), stride: 2, pad: 1 };
            (Box::new(layer), uniform([1, 2, 7, 6], rng))
        }
        "deconv2d" => {
            let layer = DeconvLayer { params: conv_params([2, 3, 3, 3], 3, rng), stride: 1, pad: 1 };
            (Box::new(layer), uniform([2, 2, 4, 5], rng))
        }
        "deconv2d-strided" => {
            let layer = DeconvLayer { params: conv_params([2, 2, 4, 4], 2, rng), stride: 2, pad: 1 };
            (Box::new(layer), uniform([1, 2, 3, 4], rng))
        }
        "maxpool2d" => (Box::new(MaxPoolLayer), well_separated([2, 2, 6, 4], 1e-3, rng)),
        "maxunpool2d" => {
            let (_, switches) = maxpool2d(&well_separated([1, 2, 6, 6], 1e-3, rng))?;
            (Box::new(MaxUnpoolLayer { switches, out_h: 6, out_w: 6 }), uniform([1, 2, 3, 3], rng))
        }
        "bilinear_upsample2x" => (Box::new(BilinearLayer), uniform([2, 2, 3, 4], rng)),
        "relu" => (Box::new(ReluLayer), well_separated([2, 2, 4, 4], 1e-3, rng)),
        "batchnorm2d" => {
            let mut params = BatchNormParams::new(3);
            params.gamma = (0..3).map(|_| rng.gen_range(0.5..1.5)).collect();
            params.beta = (0..3).map(|_| rng.gen_range(-0.5..0.5)).collect();
            (Box::new(BatchNormLayer { params }), uniform([3, 3, 3, 2], rng))
        }
        "concat_channels" => {
            let other = uniform([2, 1, 3, 3], rng);
            (Box::new(ConcatLayer { other }), uniform([2, 2, 3, 3], rng))
        }
        "mse_loss" => {
            let target = uniform([2, 2, 3, 3], rng);
            (Box::new(MseLayer { target }), uniform([2, 2, 3, 3], rng))
        }
        "weighted_softmax_ce_loss" => {
            let labels = (0..2 * 3 * 3).map(|_| rng.gen_range(0..4)).collect();
            let class_weights = (0..4).map(|_| rng.gen_range(0.2..2.0)).collect();
            (Box::new(SoftmaxCeLayer { labels, class_weights }), uniform([2, 4, 3, 3], rng))
        }
        "rbdn-k1" => {
            let mut graph = build_rbdn::<f64>(&suite_network_config())?;
            graph.initialize(rng);
            (Box::new(GraphLayer { graph }), uniform([1, 1, 16, 16], rng))
        }
        other => {
            return Err(GraphError::InvalidConfig(format!(
                "unknown gradcheck component '{other}' (one of: {})",
                SUITE_COMPONENTS.join(", ")
            )))
        }
    })
}

/// Runs the checks named by `selector` (all when `None`). Each component draws its inputs and
/// parameters from its own stream of `seed`, so selecting a subset does not change them.
pub fn gradient_suite(selector: Option<&str>, seed: u64) -> Result<Vec<GradCheckReport>, GraphError> {
    let names: Vec<&str> = match selector {
        None | Some("all") => SUITE_COMPONENTS.to_vec(),
        Some(s) => vec![s],
    };
    let mut reports = Vec::with_capacity(names.len());
    for name in names {
        let stream = SUITE_COMPONENTS.iter().position(|c| *c == name).unwrap_or(usize::MAX) as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let (mut layer, x) = case(name, &mut rng)?;
        let mut report = finite_diff_check(layer.as_mut(), &x, SUITE_STEP)?;
        report.layer = name.to_string();
        reports.push(report);
    }
    Ok(reports)
}

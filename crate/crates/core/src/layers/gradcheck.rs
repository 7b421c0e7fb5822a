//! Central-difference gradient checking for anything with an analytic backward pass.
//!
//! The probe is a fixed random projection `⟨r, f(x)⟩` of the output rather than a plain
//! sum, so that layers whose outputs sum to a constant (batch norm with `β = 0`) still get
//! a non-trivial check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

use super::{
    batchnorm::{batchnorm2d, batchnorm2d_backward, BatchNormParams, DEFAULT_EPS, DEFAULT_STAT_MOMENTUM},
    concat::{concat_channels, split_channels},
    conv::{conv2d, conv2d_backward, deconv2d, deconv2d_backward, ConvParams},
    loss::{mse_loss, weighted_softmax_ce_loss},
    pool::{maxpool2d, maxpool2d_backward, maxunpool2d, maxunpool2d_backward, PoolSwitches},
    relu, relu_backward,
    upsample::{bilinear_upsample2x, bilinear_upsample2x_backward},
    LayerError, Mode,
};

/// Denominator floor for relative errors.
pub const REL_FLOOR: f64 = 1e-8;
const PROBE_SEED: u64 = 0x5eed_9e0b;

/// A double-precision function of one tensor with learnable parameters and an analytic
/// vector-Jacobian product.
pub trait Differentiable {
    fn name(&self) -> String;

    fn forward(&mut self, x: &Tensor<f64>) -> Result<Tensor<f64>, LayerError>;

    /// Returns the gradient with respect to `x` and to each slice of [`Self::params_mut`],
    /// in the same order.
    fn backward(&mut self, x: &Tensor<f64>, dy: &Tensor<f64>) -> Result<(Tensor<f64>, Vec<Vec<f64>>), LayerError>;

    fn params_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_names(&self) -> Vec<String> {
        Vec::new()
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub count: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub layer: String,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the analytic gradient of `layer` at `x` against central differences with step `h`,
/// for every input element and every parameter element.
pub fn finite_diff_check(
    layer: &mut dyn Differentiable,
    x: &Tensor<f64>,
    h: f64,
) -> Result<GradCheckReport, LayerError> {
    let y0 = layer.forward(x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED);
    let probe = Tensor::from_fn(y0.shape(), |_| rng.gen_range(0.5..1.5));
    let (dx, dparams) = layer.backward(x, &probe)?;

    let objective = |layer: &mut dyn Differentiable, x: &Tensor<f64>| -> Result<f64, LayerError> {
        Ok(layer.forward(x)?.dot(&probe))
    };

    let mut entries = Vec::new();
    let mut worst = 0.0f64;
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + h;
        let fp = objective(layer, &xp)?;
        xp.data_mut()[i] = orig - h;
        let fm = objective(layer, &xp)?;
        xp.data_mut()[i] = orig;
        worst = worst.max(relative_error(dx.data()[i], (fp - fm) / (2.0 * h)));
    }
    entries.push(GradCheckEntry { name: "input".into(), count: x.len(), max_rel_error: worst });

    let names = layer.param_names();
    for (pi, grad) in dparams.iter().enumerate() {
        let mut worst = 0.0f64;
        #[allow(clippy::needless_range_loop)]
        for j in 0..grad.len() {
            let orig = layer.params_mut()[pi][j];
            layer.params_mut()[pi][j] = orig + h;
            let fp = objective(layer, x)?;
            layer.params_mut()[pi][j] = orig - h;
            let fm = objective(layer, x)?;
            layer.params_mut()[pi][j] = orig;
            worst = worst.max(relative_error(grad[j], (fp - fm) / (2.0 * h)));
        }
        let name = names.get(pi).cloned().unwrap_or_else(|| format!("param{pi}"));
        entries.push(GradCheckEntry { name, count: grad.len(), max_rel_error: worst });
    }
    Ok(GradCheckReport { layer: layer.name(), entries })
}

pub struct ConvLayer {
    pub params: ConvParams<f64>,
    pub stride: usize,
    pub pad: usize,
}

impl Differentiable for ConvLayer {
    fn name(&self) -> String {
        "conv2d".into()
    }

    fn forward(&mut self, x: &Tensor<f64>) -> Result<Tensor<f64>, LayerError> {
        conv2d(x, &self.params, self.stride, self.pad)
    }

    fn backward(&mut self, x: &Tensor<f64>, dy: &Tensor<f64>) -> Result<(Tensor<f64>, Vec<Vec<f64>>), LayerError> {
        let g = conv2d_backward(x, &self.params, self.stride, self.pad, dy)?;
        Ok((g.input, vec![g.weight.into_vec(), g.bias]))
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.params.weight.data_mut(), &mut self.params.bias]
    }

    fn param_names(&self) -> Vec<String> {
        vec!["weight".into(), "bias".into()]
    }
}

pub struct DeconvLayer {
    pub params: ConvParams<f64>,
    pub stride: usize,
    pub pad: usize,
}

impl Differentiable for DeconvLayer {
    fn name(&self) -> String {
        "deconv2d".into()
    }

    fn forward(&mut self, x: &Tensor<f64>) -> Result<Tensor<f64>, LayerError> {
        deconv2d(x, &self.params, self.stride, self.pad)
    }

    fn backward(&mut self, x: &Tensor<f64>, dy: &Tensor<f64>) -> Result<(Tensor<f64>, Vec<Vec<f64>>), LayerError> {
        let g = deconv2d_backward(x, &self.params, self.stride, self.pad, dy)?;
        Ok((g.input, vec![g.weight.into_vec(), g.bias]))
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.params.weight.data_mut(), &mut self.params.bias]
    }

    fn param_names(&self) -> Vec<String> {
        vec!["weight".into(), "bias".into()]
    }
}

pub struct MaxPoolLayer;

impl Differentiable for MaxPoolLayer {
    fn name(&self) -> String {
        "maxpool2d".into()
    }

    fn forward(&mut self, x: &Tensor<f64>) -> Result<Tensor<f64>, LayerError> {
        Ok(maxpool2d(x)?.0)
    }

    fn backward(&mut self, x: &Tensor<f64>, dy: &Tensor<f64>) -> Result<(Tensor<f64>, Vec<Vec<f64>>), LayerError> {
        let (_, s) = maxpool2d(x)?;
        Ok((maxpool2d_backward(dy, &s, x.h(), x.w())?, Vec::new()))
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        Vec::new()
    }
}

/// Unpooling with switches frozen at construction.
pub struct MaxUnpoolLayer {
    pub switches: PoolSwitches,
    pub out_h: usize,
    pub out_w: usize,
}

impl Differentiable for MaxUnpoolLayer {
    fn name(&self) -> String {
        "maxunpool2d".into()
    }

    fn forward(&mut self, x: &Tensor<f64>) -> Result<Tensor<f64>, LayerError> {
        maxunpool2d(x, &self.switches, self.out_h, self.out_w)
    }

    fn backward(&mut self, _x: &Tensor<f64>, dy: &Tensor<f64>) -> Result<(Tensor<f64>, Vec<Vec<f64>>), LayerError> {
        Ok((maxunpool2d_backward(dy, &self.switches)?, Vec::new()))
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        Vec::new()
    }
}

pub struct BilinearLayer;

impl Differentiable for BilinearLayer {
    fn name(&self) -> String {
        "bilinear_upsample2x".into()
    }

    fn forward(&mut self, x: &Tensor<f64>) -> Result<Tensor<f64>, LayerError> {
        Ok(bilinear_upsample2x(x))
    }

    fn backward(&mut self, _x: &Tensor<f64>, dy: &Tensor<f64>) -> Result<(Tensor<f64>, Vec<Vec<f64>>), LayerError> {
        Ok((bilinear_upsample2x_backward(dy), Vec::new()))
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        Vec::new()
    }
}

pub struct ReluLayer;

impl Differentiable for ReluLayer {
    fn name(&self) -> String {
        "relu".into()
    }

    fn forward(&mut self, x: &Tensor<f64>) -> Result<Tensor<f64>, LayerError> {
        Ok(relu(x))
    }

    fn backward(&mut self, x: &Tensor<f64>, dy: &Tensor<f64>) -> Result<(Tensor<f64>, Vec<Vec<f64>>), LayerError> {
        Ok((relu_backward(x, dy), Vec::new()))
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        Vec::new()
    }
}

/// Batch norm in training mode (batch statistics).
pub struct BatchNormLayer {
    pub params: BatchNormParams<f64>,
}

impl Differentiable for BatchNormLayer {
    fn name(&self) -> String {
        "batchnorm2d".into()
    }

    fn forward(&mut self, x: &Tensor<f64>) -> Result<Tensor<f64>, LayerError> {
        Ok(batchnorm2d(x, &mut self.params, Mode::Train, DEFAULT_EPS, DEFAULT_STAT_MOMENTUM)?.0)
    }

    fn backward(&mut self, x: &Tensor<f64>, dy: &Tensor<f64>) -> Result<(Tensor<f64>, Vec<Vec<f64>>), LayerError> {
        let (_, cache) = batchnorm2d(x, &mut self.params, Mode::Train, DEFAULT_EPS, DEFAULT_STAT_MOMENTUM)?;
        let (dx, dg, db) = batchnorm2d_backward(&cache, &self.params, dy)?;
        Ok((dx, vec![dg, db]))
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.params.gamma, &mut self.params.beta]
    }

    fn param_names(&self) -> Vec<String> {
        vec!["gamma".into(), "beta".into()]
    }
}

/// Concatenates the input with a fixed tensor, input first.
pub struct ConcatLayer {
    pub other: Tensor<f64>,
}

impl Differentiable for ConcatLayer {
    fn name(&self) -> String {
        "concat_channels".into()
    }

    fn forward(&mut self, x: &Tensor<f64>) -> Result<Tensor<f64>, LayerError> {
        concat_channels(&[x, &self.other])
    }

    fn backward(&mut self, x: &Tensor<f64>, dy: &Tensor<f64>) -> Result<(Tensor<f64>, Vec<Vec<f64>>), LayerError> {
        let mut parts = split_channels(dy, &[x.c(), self.other.c()])?;
        Ok((parts.swap_remove(0), Vec::new()))
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        Vec::new()
    }
}

/// MSE against a fixed target; the output is the scalar loss as a 1×1×1×1 tensor.
pub struct MseLayer {
    pub target: Tensor<f64>,
}

impl Differentiable for MseLayer {
    fn name(&self) -> String {
        "mse_loss".into()
    }

    fn forward(&mut self, x: &Tensor<f64>) -> Result<Tensor<f64>, LayerError> {
        let (l, _) = mse_loss(x, &self.target)?;
        Ok(Tensor::full([1, 1, 1, 1], l))
    }

    fn backward(&mut self, x: &Tensor<f64>, dy: &Tensor<f64>) -> Result<(Tensor<f64>, Vec<Vec<f64>>), LayerError> {
        let (_, g) = mse_loss(x, &self.target)?;
        let s = dy.data()[0];
        Ok((g.map(|v| v * s), Vec::new()))
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        Vec::new()
    }
}

pub struct SoftmaxCeLayer {
    pub labels: Vec<usize>,
    pub class_weights: Vec<f64>,
}

impl Differentiable for SoftmaxCeLayer {
    fn name(&self) -> String {
        "weighted_softmax_ce_loss".into()
    }

    fn forward(&mut self, x: &Tensor<f64>) -> Result<Tensor<f64>, LayerError> {
        let (l, _) = weighted_softmax_ce_loss(x, &self.labels, &self.class_weights)?;
        Ok(Tensor::full([1, 1, 1, 1], l))
    }

    fn backward(&mut self, x: &Tensor<f64>, dy: &Tensor<f64>) -> Result<(Tensor<f64>, Vec<Vec<f64>>), LayerError> {
        let (_, g) = weighted_softmax_ce_loss(x, &self.labels, &self.class_weights)?;
        let s = dy.data()[0];
        Ok((g.map(|v| v * s), Vec::new()))
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        Vec::new()
    }
}

/// Random tensor whose entries keep at least `margin` away from zero and from each other
/// within every 2×2 window, so ReLU kinks and pooling ties stay outside `±h`.
pub fn well_separated(shape: [usize; 4], margin: f64, rng: &mut impl Rng) -> Tensor<f64> {
    let mut t = Tensor::from_fn(shape, |_| {
        let v: f64 = rng.gen_range(margin..1.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    });
    let [n, c, h, w] = shape;
    for b in 0..n {
        for ch in 0..c {
            for y in (0..h - h % 2).step_by(2) {
                for x in (0..w - w % 2).step_by(2) {
                    loop {
                        let vals =
                            [t[[b, ch, y, x]], t[[b, ch, y, x + 1]], t[[b, ch, y + 1, x]], t[[b, ch, y + 1, x + 1]]];
                        let close = (0..4).any(|i| (i + 1..4).any(|j| (vals[i] - vals[j]).abs() < margin));
                        if !close {
                            break;
                        }
                        let (dy, dx) = [(0, 0), (0, 1), (1, 0), (1, 1)][rng.gen_range(0..4)];
                        let v: f64 = rng.gen_range(margin..1.0);
                        t[[b, ch, y + dy, x + dx]] = if rng.gen_bool(0.5) { v } else { -v };
                    }
                }
            }
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    struct BrokenScale;

    impl Differentiable for BrokenScale {
        fn name(&self) -> String {
            "broken".into()
        }

        fn forward(&mut self, x: &Tensor<f64>) -> Result<Tensor<f64>, LayerError> {
            Ok(x.map(|v| 3.0 * v))
        }

        fn backward(&mut self, _x: &Tensor<f64>, dy: &Tensor<f64>) -> Result<(Tensor<f64>, Vec<Vec<f64>>), LayerError> {
            Ok((dy.map(|v| 2.0 * v), Vec::new()))
        }

        fn params_mut(&mut self) -> Vec<&mut [f64]> {
            Vec::new()
        }
    }

    #[test]
    fn detects_wrong_backward() {
        let x = Tensor::full([1, 1, 2, 2], 0.3);
        let r = finite_diff_check(&mut BrokenScale, &x, 1e-5).unwrap();
        assert!(r.max_rel_error() > 0.3);
    }

    #[test]
    fn linear_layer_is_near_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut layer = ConvLayer {
            params: ConvParams {
                weight: Tensor::from_fn([2, 2, 1, 1], |_| rng.gen_range(-1.0..1.0)),
                bias: vec![0.1, -0.2],
            },
            stride: 1,
            pad: 0,
        };
        let x = Tensor::from_fn([1, 2, 3, 3], |_| rng.gen_range(-1.0..1.0));
        let r = finite_diff_check(&mut layer, &x, 1e-5).unwrap();
        assert!(r.max_rel_error() < 1e-8, "{r:?}");
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-12, 0.0) - 1e-4).abs() < 1e-18);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    }

    #[test]
    fn separated_inputs_respect_margin() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = well_separated([2, 2, 6, 6], 1e-3, &mut rng);
        assert!(t.data().iter().all(|v| v.abs() >= 1e-3));
        let (_, s) = maxpool2d(&t).unwrap();
        assert_eq!(s.shape(), [2, 2, 3, 3]);
    }
}

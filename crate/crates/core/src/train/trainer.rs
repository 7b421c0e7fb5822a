//! Batch assembly per task and the training loop.

use std::fmt;
use std::str::FromStr;

use crate::graph::{NetworkGraph, Padding};
use crate::imaging::{encode_ab, rgb_to_lab, rgb_to_ycbcr, AbQuantizer, Image};
use crate::layers::{mse_loss, weighted_softmax_ce_loss, Mode};
use crate::tensor::Tensor;

use super::{
    adam_step, apply_wgn, sample_crop, sgd_step, step_lr, stream_rng, LossKind, Optimizer, OptimizerState, TrainConfig,
    TrainError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    Denoise,
    ColorizeYcbcr,
    ColorizeLab,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Denoise => "denoise",
            Task::ColorizeYcbcr => "colorize-ycbcr",
            Task::ColorizeLab => "colorize-lab",
        }
    }

    pub fn loss(self) -> LossKind {
        match self {
            Task::ColorizeLab => LossKind::WeightedSoftmax,
            _ => LossKind::Mse,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "denoise" => Ok(Task::Denoise),
            "colorize-ycbcr" => Ok(Task::ColorizeYcbcr),
            "colorize-lab" => Ok(Task::ColorizeLab),
            other => Err(TrainError::Config(format!("unknown task '{other}' (denoise, colorize-ycbcr, colorize-lab)"))),
        }
    }
}

/// A task together with the data its loss needs.
#[derive(Debug, Clone)]
pub enum Objective {
    Denoise,
    ColorizeYcbcr,
    ColorizeLab { quantizer: AbQuantizer, class_weights: Vec<f64> },
}

impl Objective {
    pub fn task(&self) -> Task {
        match self {
            Objective::Denoise => Task::Denoise,
            Objective::ColorizeYcbcr => Task::ColorizeYcbcr,
            Objective::ColorizeLab { .. } => Task::ColorizeLab,
        }
    }

    /// `(in, out)` channel counts the network must have.
    pub fn channels(&self) -> (usize, usize) {
        match self {
            Objective::Denoise => (1, 1),
            Objective::ColorizeYcbcr => (1, 2),
            Objective::ColorizeLab { quantizer, .. } => (1, quantizer.len()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Dense(Tensor<f32>),
    /// One class per pixel, `(n, h, w)` row-major.
    Labels(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub input: Tensor<f32>,
    pub target: Target,
    /// Per-sample noise level (denoising only).
    pub sigmas: Vec<f64>,
}

fn as_rgb(img: &Image) -> Image {
    if img.channels() == 3 {
        return img.clone();
    }
    let data = img.data().iter().flat_map(|&v| [v, v, v]).collect();
    Image::from_data(img.width(), img.height(), 3, data).expect("gray expanded to rgb")
}

/// Luma scaled to `[0, 1]` and the two chroma planes scaled the same way (128 ↦ 0.502).
pub fn ycbcr_tensors(img: &Image) -> (Tensor<f32>, Tensor<f32>) {
    let p = rgb_to_ycbcr(&as_rgb(img)).expect("rgb input");
    let (w, h) = (p.width, p.height);
    let y = Tensor::from_fn([1, 1, h, w], |[_, _, r, c]| (p.planes[0][r * w + c] / 255.0) as f32);
    let cbcr = Tensor::from_fn([1, 2, h, w], |[_, k, r, c]| (p.planes[k + 1][r * w + c] / 255.0) as f32);
    (y, cbcr)
}

/// Lightness scaled to `[0, 1]` plus the raw a and b planes.
pub fn lab_tensors(img: &Image) -> (Tensor<f32>, Vec<f64>, Vec<f64>) {
    let p = rgb_to_lab(&as_rgb(img)).expect("rgb input");
    let (w, h) = (p.width, p.height);
    let l = Tensor::from_fn([1, 1, h, w], |[_, _, r, c]| (p.planes[0][r * w + c] / 100.0) as f32);
    let [_, a, b] = p.planes;
    (l, a, b)
}

fn stack(parts: &[Tensor<f32>]) -> Tensor<f32> {
    let [_, c, h, w] = parts[0].shape();
    let data = parts.iter().flat_map(|t| t.data().iter().copied()).collect();
    Tensor::from_vec([parts.len(), c, h, w], data).expect("equal crops")
}

/// The batch for `iteration`, a pure function of `(images, cfg, objective, iteration)`.
pub fn make_batch(
    images: &[Image],
    cfg: &TrainConfig,
    objective: &Objective,
    iteration: u64,
) -> Result<Batch, TrainError> {
    if images.is_empty() {
        return Err(TrainError::NoUsableImages { crop: cfg.crop_size });
    }
    let mut rng = stream_rng(cfg.seed, iteration);
    let mut inputs = Vec::with_capacity(cfg.batch_size);
    let mut dense = Vec::new();
    let mut labels = Vec::new();
    let mut sigmas = Vec::new();
    for _ in 0..cfg.batch_size {
        let idx = rand::Rng::gen_range(&mut rng, 0..images.len());
        let (crop, _) = sample_crop(&images[idx], cfg.crop_size, &mut rng)?;
        match objective {
            Objective::Denoise => {
                let clean: Tensor<f32> = crop.to_gray().to_tensor();
                let (noisy, sigma) = apply_wgn(&clean, cfg.noise_sigma_range, 1.0 / 255.0, &mut rng)?;
                inputs.push(noisy);
                dense.push(clean);
                sigmas.push(sigma);
            }
            Objective::ColorizeYcbcr => {
                let (y, cbcr) = ycbcr_tensors(&crop);
                inputs.push(y);
                dense.push(cbcr);
            }
            Objective::ColorizeLab { quantizer, .. } => {
                let (l, a, b) = lab_tensors(&crop);
                inputs.push(l);
                labels.extend(encode_ab(&a, &b, quantizer));
            }
        }
    }
    let target = match objective {
        Objective::ColorizeLab { .. } => Target::Labels(labels),
        _ => Target::Dense(stack(&dense)),
    };
    Ok(Batch { input: stack(&inputs), target, sigmas })
}

/// Scalar loss and its gradient with respect to the network output.
pub fn batch_loss(
    output: &Tensor<f32>,
    batch: &Batch,
    objective: &Objective,
) -> Result<(f64, Tensor<f32>), TrainError> {
    let (loss, grad) = match (&batch.target, objective) {
        (Target::Dense(t), _) => mse_loss(output, t)?,
        (Target::Labels(l), Objective::ColorizeLab { class_weights, .. }) => {
            let w: Vec<f32> = class_weights.iter().map(|&v| v as f32).collect();
            weighted_softmax_ce_loss(output, l, &w)?
        }
        (Target::Labels(_), _) => return Err(TrainError::Config("label targets need the colorize-lab task".into())),
    };
    Ok((loss as f64, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossPoint {
    pub iteration: u64,
    pub lr: f64,
    pub loss: f64,
}

/// State after each completed update, handed to the loop's observer.
pub struct Progress<'a> {
    /// Zero-based index of the update just applied.
    pub iteration: u64,
    pub lr: f64,
    pub loss: f64,
    pub graph: &'a NetworkGraph<f32>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub loss_curve: Vec<LossPoint>,
    pub iterations: u64,
}

/// Renders `iteration,lr,loss` rows with a header.
pub fn loss_curve_csv(curve: &[LossPoint]) -> String {
    let mut out = String::from("iteration,lr,loss\n");
    for p in curve {
        out.push_str(&format!("{},{:e},{:.8e}\n", p.iteration, p.lr, p.loss));
    }
    out
}

/// Drops images smaller than the crop, warning about each.
pub fn usable_images(images: &[Image], crop: usize) -> Vec<Image> {
    images
        .iter()
        .enumerate()
        .filter_map(|(i, img)| {
            if img.width() >= crop && img.height() >= crop {
                Some(img.clone())
            } else {
                log::warn!("skipping image {i}: {}x{} is smaller than crop {crop}", img.width(), img.height());
                None
            }
        })
        .collect()
}

/// Runs `cfg.max_iters` updates. The loss curve records every `log_every`-th update and the
/// last one. Aborts on a non-finite loss.
pub fn train_loop(
    graph: &mut NetworkGraph<f32>,
    images: &[Image],
    cfg: &TrainConfig,
    objective: &Objective,
    log_every: u64,
    observer: &mut dyn FnMut(&Progress<'_>) -> Result<(), TrainError>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate(graph.min_divisor())?;
    if cfg.loss != objective.task().loss() {
        return Err(TrainError::Config(format!(
            "loss '{}' does not fit task '{}' (needs '{}')",
            cfg.loss,
            objective.task(),
            objective.task().loss()
        )));
    }
    let (in_c, out_c) = objective.channels();
    let net = graph.config();
    if (net.in_channels, net.out_channels) != (in_c, out_c) {
        return Err(TrainError::Config(format!(
            "task '{}' needs {in_c}->{out_c} channels, network has {}->{}",
            objective.task(),
            net.in_channels,
            net.out_channels
        )));
    }
    let images = usable_images(images, cfg.crop_size);
    if images.is_empty() {
        return Err(TrainError::NoUsableImages { crop: cfg.crop_size });
    }
    let sizes: Vec<usize> = graph.params_mut().iter().map(|p| p.len()).collect();
    let mut state = OptimizerState::<f32>::new(cfg.optimizer, &sizes);
    let mut curve = Vec::new();
    let log_every = log_every.max(1);
    for it in 0..cfg.max_iters {
        let batch = make_batch(&images, cfg, objective, it)?;
        let trace = graph.forward_trace(&batch.input, Mode::Train)?;
        let (loss, dy) = batch_loss(trace.output(), &batch, objective)?;
        if !loss.is_finite() {
            return Err(TrainError::NonFinite { iteration: it, loss });
        }
        let (_, mut grads) = graph.backward(&trace, &dy)?;
        drop(trace);
        let lr = step_lr(it, cfg.base_lr, cfg.lr_gamma, cfg.lr_step);
        let mut params = graph.params_mut();
        match cfg.optimizer {
            Optimizer::Sgd => sgd_step(&mut params, &grads, &mut state.first, lr, cfg.momentum, cfg.weight_decay)?,
            Optimizer::Adam => {
                let wd = cfg.weight_decay as f32;
                for (g, p) in grads.iter_mut().zip(params.iter()) {
                    g.iter_mut().zip(p.iter()).for_each(|(g, &p)| *g += wd * p);
                }
                adam_step(
                    &mut params,
                    &grads,
                    &mut state.first,
                    &mut state.second,
                    &mut state.step,
                    lr,
                    cfg.adam_beta1,
                    cfg.adam_beta2,
                    cfg.adam_eps,
                )?
            }
        }
        if it % log_every == 0 || it + 1 == cfg.max_iters {
            curve.push(LossPoint { iteration: it, lr, loss });
        }
        observer(&Progress { iteration: it, lr, loss, graph })?;
    }
    Ok(TrainOutcome { loss_curve: curve, iterations: cfg.max_iters })
}

/// Mean per-element squared error (unit intensity scale) of the denoised outputs against the
/// clean images. Noise is unclipped float AWGN drawn from `stream_rng(seed, index)`.
pub fn denoise_validation_mse(
    graph: &NetworkGraph<f32>,
    images: &[Image],
    sigma: f64,
    seed: u64,
) -> Result<f64, TrainError> {
    if images.is_empty() {
        return Err(TrainError::Config("empty validation set".into()));
    }
    let mut total = 0.0;
    for (i, img) in images.iter().enumerate() {
        let clean: Tensor<f32> = img.to_gray().to_tensor();
        let (noisy, _) = apply_wgn(&clean, (sigma, sigma), 1.0 / 255.0, &mut stream_rng(seed, i as u64))?;
        let out = graph.infer(&noisy, Padding::Reflect)?;
        total += mse_loss(&out, &clean)?.0 as f64;
    }
    Ok(total / images.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_rbdn, RbdnConfig};
    use crate::imaging::toy_image;
    use rand::SeedableRng;

    fn toy_setup() -> (NetworkGraph<f32>, Vec<Image>, TrainConfig) {
        let net = RbdnConfig { branches: 0, patch_kernel: 3, channels: 4, depth: 1, ..Default::default() };
        let mut g = build_rbdn::<f32>(&net).unwrap();
        g.initialize(&mut rand_chacha::ChaCha8Rng::seed_from_u64(0));
        let images = vec![toy_image(24, 1, 0)];
        let cfg = TrainConfig {
            base_lr: 0.05,
            batch_size: 2,
            crop_size: 16,
            max_iters: 12,
            noise_sigma_range: (25.0, 25.0),
            ..Default::default()
        };
        (g, images, cfg)
    }

    #[test]
    fn batches_are_deterministic() {
        let (_, images, cfg) = toy_setup();
        let a = make_batch(&images, &cfg, &Objective::Denoise, 3).unwrap();
        assert_eq!(a, make_batch(&images, &cfg, &Objective::Denoise, 3).unwrap());
        assert_ne!(a, make_batch(&images, &cfg, &Objective::Denoise, 4).unwrap());
        assert_eq!(a.input.shape(), [2, 1, 16, 16]);
        assert_eq!(a.sigmas, vec![25.0, 25.0]);
    }

    #[test]
    fn runs_are_bitwise_reproducible() {
        let run = || {
            let (mut g, images, cfg) = toy_setup();
            let out = train_loop(&mut g, &images, &cfg, &Objective::Denoise, 1, &mut |_| Ok(())).unwrap();
            (g, out.loss_curve)
        };
        let (g1, c1) = run();
        let (g2, c2) = run();
        assert_eq!(g1, g2);
        assert_eq!(c1, c2);
        assert_eq!(c1.len(), 12);
        assert!(loss_curve_csv(&c1).starts_with("iteration,lr,loss\n0,"));
    }

    #[test]
    fn rejects_mismatched_setup() {
        let (mut g, images, cfg) = toy_setup();
        let wrong = TrainConfig { loss: LossKind::WeightedSoftmax, ..cfg.clone() };
        assert!(train_loop(&mut g, &images, &wrong, &Objective::Denoise, 1, &mut |_| Ok(())).is_err());
        assert!(train_loop(&mut g, &images, &cfg, &Objective::ColorizeYcbcr, 1, &mut |_| Ok(())).is_err());
        let big = TrainConfig { crop_size: 32, ..cfg };
        assert!(matches!(
            train_loop(&mut g, &images, &big, &Objective::Denoise, 1, &mut |_| Ok(())),
            Err(TrainError::NoUsableImages { .. })
        ));
    }

    #[test]
    fn nan_loss_aborts() {
        let (mut g, images, cfg) = toy_setup();
        // ReLU maps NaN to 0, so poison the output layer's bias.
        *g.params_mut().last_mut().unwrap().first_mut().unwrap() = f32::NAN;
        assert!(matches!(
            train_loop(&mut g, &images, &cfg, &Objective::Denoise, 1, &mut |_| Ok(())),
            Err(TrainError::NonFinite { iteration: 0, .. })
        ));
    }

    #[test]
    fn colorization_batches() {
        let (_, _, cfg) = toy_setup();
        let img = Image::from_data(16, 16, 3, (0..768).map(|v| (v * 7 % 256) as u8).collect()).unwrap();
        let b = make_batch(std::slice::from_ref(&img), &cfg, &Objective::ColorizeYcbcr, 0).unwrap();
        let Target::Dense(t) = &b.target else { panic!("dense target") };
        assert_eq!(t.shape(), [2, 2, 16, 16]);
        let q = AbQuantizer::standard_sweep();
        let obj = Objective::ColorizeLab { class_weights: vec![1.0; q.len()], quantizer: q };
        let b = make_batch(&[img], &cfg, &obj, 0).unwrap();
        let Target::Labels(l) = &b.target else { panic!("labels") };
        assert_eq!(l.len(), 2 * 16 * 16);
        let logits = Tensor::zeros([2, obj.channels().1, 16, 16]);
        let (loss, _) = batch_loss(&logits, &b, &obj).unwrap();
        assert!((loss - (obj.channels().1 as f64).ln()).abs() < 1e-4);
    }
}

//! The subcommands as library functions; `main` only parses flags and maps errors to exit codes.

use std::fs;
use std::path::{Path, PathBuf};

use rbdn_core::fsutil::write_atomic;
use rbdn_core::graph::{build_rbdn, encode_checkpoint, gradient_suite, load_checkpoint, NetworkGraph, SUITE_TOLERANCE};
use rbdn_core::imaging::{
    psnr, read_pnm, scan_dataset, write_pnm, write_toy_dataset, AbQuantizer, Image, EXPECTED_BINS,
};
use rbdn_core::train::{denoise_validation_mse, loss_curve_csv, noisy_image, stream_rng, train_loop, Objective, Task};

use crate::ablation::{ablation_csv, run_variant, validation_points, AblationVariant, INIT_STREAM};
use crate::config::{Codebook, RunConfig};
use crate::tasks::{eval_csv, evaluate_denoising, run_inference};
use crate::CliError;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOSS_FILE: &str = "loss.csv";
pub const CONFIG_FILE: &str = "run.cfg";
pub const EVAL_FILE: &str = "eval.csv";
pub const ABLATION_FILE: &str = "ablation.csv";

/// Default evaluation grid: 10 to 60 in steps of 5.
pub fn default_sigmas() -> Vec<f64> {
    (0..11).map(|i| 10.0 + 5.0 * i as f64).collect()
}

pub fn parse_sigmas(list: &str) -> Result<Vec<f64>, CliError> {
    let sigmas = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| *v >= 0.0 && v.is_finite())
                .ok_or_else(|| CliError::Usage(format!("sigma '{}' is not a non-negative number", s.trim())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if sigmas.is_empty() {
        return Err(CliError::Usage("empty sigma list".into()));
    }
    Ok(sigmas)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    write_atomic(path, bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

fn load_images(dir: &Path, min_size: usize) -> Result<Vec<(String, Image)>, CliError> {
    let ds = scan_dataset(dir, min_size)?;
    for s in &ds.skipped {
        log::warn!("skipped {}: {}", s.path.display(), s.reason);
    }
    Ok(ds.images)
}

fn images_only(named: Vec<(String, Image)>) -> Vec<Image> {
    named.into_iter().map(|(_, img)| img).collect()
}

/// What `train` wrote.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
    pub final_loss: f64,
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainReport, CliError> {
    let objective = cfg.validate()?;
    let train_dir = cfg.require_train_dir()?;
    let val_dir = cfg.existing_val_dir()?;
    let images = images_only(load_images(train_dir, cfg.train.crop_size)?);
    let val = match (val_dir, cfg.val_every, &objective) {
        (Some(d), 1.., Objective::Denoise) => images_only(load_images(d, 1)?),
        (Some(_), 1.., _) => {
            log::warn!("periodic validation is only defined for denoising; skipping");
            Vec::new()
        }
        _ => Vec::new(),
    };
    create_dir(&cfg.out_dir)?;
    let mut graph = build_rbdn::<f32>(&cfg.net)?;
    graph.initialize(&mut stream_rng(cfg.train.seed, INIT_STREAM));
    log::info!(
        "training {} on {} images: {} parameters, {} iterations",
        cfg.task,
        images.len(),
        graph.learnable_count(),
        cfg.train.max_iters
    );
    let mut observe = |p: &rbdn_core::train::Progress<'_>| {
        let done = p.iteration + 1;
        if done.is_multiple_of(cfg.log_every.max(1)) {
            log::info!("iteration {done}: lr {:e} loss {:.6}", p.lr, p.loss);
        }
        if !val.is_empty() && done.is_multiple_of(cfg.val_every) {
            let mse = denoise_validation_mse(p.graph, &val, cfg.val_sigma, cfg.train.seed)?;
            log::info!("iteration {done}: validation mse {mse:.6}");
        }
        Ok(())
    };
    let outcome = train_loop(&mut graph, &images, &cfg.train, &objective, cfg.log_every, &mut observe)?;
    let checkpoint = cfg.out_dir.join(CHECKPOINT_FILE);
    let loss_csv = cfg.out_dir.join(LOSS_FILE);
    write_file(&checkpoint, &encode_checkpoint(&graph, outcome.iterations))?;
    write_file(&loss_csv, loss_curve_csv(&outcome.loss_curve).as_bytes())?;
    write_file(&cfg.out_dir.join(CONFIG_FILE), cfg.to_text().as_bytes())?;
    let final_loss = outcome.loss_curve.last().map_or(f64::NAN, |p| p.loss);
    Ok(TrainReport { checkpoint, loss_csv, final_loss })
}

/// The task a model was trained for, read off its channel widths.
pub fn model_objective(graph: &NetworkGraph<f32>, cfg: &RunConfig) -> Result<Objective, CliError> {
    let net = graph.config();
    if net.in_channels != 1 {
        return Err(CliError::Data(format!("model takes {} input channels; every task uses 1", net.in_channels)));
    }
    Ok(match net.out_channels {
        1 => Objective::Denoise,
        2 => Objective::ColorizeYcbcr,
        q => {
            let quantizer = match cfg.ab_codebook {
                Codebook::Strict if q == EXPECTED_BINS => cfg.quantizer()?,
                _ => AbQuantizer::standard_sweep(),
            };
            if quantizer.len() != q {
                return Err(CliError::Data(format!(
                    "model has {q} output channels, which matches no task (ab codebook has {})",
                    quantizer.len()
                )));
            }
            Objective::ColorizeLab { quantizer, class_weights: vec![1.0; q] }
        }
    })
}

fn load_model(path: &Path) -> Result<NetworkGraph<f32>, CliError> {
    let ckpt = load_checkpoint::<f32>(path)?;
    log::info!("loaded {} (iteration {})", path.display(), ckpt.iteration);
    Ok(ckpt.graph)
}

/// Input and output PSNR against the clean input when `sigma` corrupted it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferReport {
    pub psnr_in: Option<f64>,
    pub psnr_out: Option<f64>,
}

pub fn cmd_infer(
    model: &Path,
    input: &Path,
    output: &Path,
    sigma: Option<f64>,
    seed: u64,
    cfg: &RunConfig,
) -> Result<InferReport, CliError> {
    let graph = load_model(model)?;
    let objective = model_objective(&graph, cfg)?;
    let image = read_pnm(input)?;
    if objective.task() == Task::Denoise && image.channels() != 1 {
        return Err(CliError::Data(format!(
            "{} has {} channels but the model is a grayscale denoiser",
            input.display(),
            image.channels()
        )));
    }
    let (source, psnr_in) = match sigma {
        Some(s) if !(s >= 0.0) => return Err(CliError::Usage(format!("sigma {s} must be non-negative"))),
        Some(s) => {
            let noisy = noisy_image(&image, s, &mut stream_rng(seed, 0));
            let p = psnr(&image, &noisy)?;
            (noisy, Some(p))
        }
        None => (image.clone(), None),
    };
    let out = run_inference(&graph, &objective, &source, cfg.temperature)?;
    let psnr_out = if objective.task() == Task::Denoise { Some(psnr(&image, &out)?) } else { None };
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_pnm(&out, output)?;
    Ok(InferReport { psnr_in, psnr_out })
}

pub fn cmd_eval(
    model: &Path,
    clean_dir: &Path,
    sigmas: &[f64],
    seed: u64,
    out_dir: &Path,
) -> Result<PathBuf, CliError> {
    let graph = load_model(model)?;
    if graph.config().out_channels != 1 || graph.config().in_channels != 1 {
        return Err(CliError::Data("eval needs a 1->1 channel denoising model".into()));
    }
    if !clean_dir.is_dir() {
        return Err(CliError::Data(format!("{} does not exist", clean_dir.display())));
    }
    let images = load_images(clean_dir, 1)?;
    let rows = evaluate_denoising(&graph, &images, sigmas, seed)?;
    create_dir(out_dir)?;
    let path = out_dir.join(EVAL_FILE);
    write_file(&path, eval_csv(&rows).as_bytes())?;
    Ok(path)
}

/// One line per component with its worst relative error. Fails if any exceeds the tolerance.
pub fn cmd_gradcheck(component: Option<&str>, seed: u64) -> Result<String, CliError> {
    let reports = gradient_suite(component, seed)?;
    let mut text = String::from("component,max_rel_error,status\n");
    let mut failed = Vec::new();
    for r in &reports {
        let err = r.max_rel_error();
        let ok = err < SUITE_TOLERANCE;
        if !ok {
            failed.push(r.layer.clone());
        }
        text.push_str(&format!("{},{err:.3e},{}\n", r.layer, if ok { "pass" } else { "FAIL" }));
    }
    if failed.is_empty() {
        Ok(text)
    } else {
        Err(CliError::Numerical(format!("{text}gradient check failed for {}", failed.join(", "))))
    }
}

/// Trains every variant in turn with the same seed and data, writing the validation curves and
/// each variant's final weights.
pub fn cmd_ablate(cfg: &RunConfig, variants: &[AblationVariant]) -> Result<PathBuf, CliError> {
    if cfg.task != Task::Denoise {
        return Err(CliError::Usage("ablation runs the denoising task".into()));
    }
    cfg.validate()?;
    let points = validation_points(cfg.train.max_iters, cfg.val_every)?;
    let train_dir = cfg.require_train_dir()?;
    let val_dir = cfg.existing_val_dir()?.ok_or_else(|| CliError::Usage("ablation needs val_dir".into()))?;
    let images = images_only(load_images(train_dir, cfg.train.crop_size)?);
    let val = images_only(load_images(val_dir, 1)?);
    create_dir(&cfg.out_dir)?;
    let mut runs = Vec::with_capacity(variants.len());
    for &v in variants {
        log::info!("ablation variant {v}");
        let run = run_variant(&cfg.net, v, &cfg.train, &images, &val, cfg.val_sigma, &points)?;
        write_file(&cfg.out_dir.join(format!("{v}.ckpt")), &encode_checkpoint(&run.graph, cfg.train.max_iters))?;
        runs.push(run);
    }
    let path = cfg.out_dir.join(ABLATION_FILE);
    write_file(&path, ablation_csv(&points, &runs).as_bytes())?;
    write_file(&cfg.out_dir.join(CONFIG_FILE), cfg.to_text().as_bytes())?;
    Ok(path)
}

/// Writes `count` procedural grayscale scenes into `dir`.
pub fn cmd_make_toy(dir: &Path, count: usize, size: usize, seed: u64, first_index: u64) -> Result<(), CliError> {
    if count == 0 || size == 0 {
        return Err(CliError::Usage("count and size must be positive".into()));
    }
    write_toy_dataset(dir, count, size, seed, first_index)?;
    Ok(())
}

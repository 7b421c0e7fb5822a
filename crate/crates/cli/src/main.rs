use std::path::{Path, PathBuf};
use std::process;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use rbdn_cli::ablation::parse_variants;
use rbdn_cli::commands::{
    cmd_ablate, cmd_eval, cmd_gradcheck, cmd_infer, cmd_make_toy, cmd_train, default_sigmas, parse_sigmas,
};
use rbdn_cli::config::RunConfig;
use rbdn_cli::{CliError, ExitCode};

#[derive(Parser)]
#[command(name = "rbdn", version, about = "Train, run and evaluate recursively branched deconvolutional networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides any config key, e.g. `--set channels=16`. Repeatable; applied in order.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn run_config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.apply_overrides(&self.overrides)?;
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a network; writes model.ckpt, loss.csv and run.cfg to the output directory.
    Train(Common),
    /// Run a trained model on one PNM image.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Corrupt the input with clipped, quantized Gaussian noise of this std (8-bit units) first.
        #[arg(long)]
        sigma: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// PSNR of a denoiser over a directory of clean images at several noise levels.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// Directory of clean PNM images.
        #[arg(long)]
        clean: PathBuf,
        /// Comma-separated noise levels; defaults to 10,15,...,60.
        #[arg(long)]
        sigmas: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference check of every layer's backward pass and a one-branch network.
    Gradcheck {
        /// One component name, or `all`.
        #[arg(long)]
        component: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Train several variants with one seed and budget; writes validation-MSE curves.
    Ablate {
        /// Comma-separated `K-variant` list, e.g. `0-full,1-full,1-bilinear`.
        #[arg(long, default_value = "0-full,1-full,1-no-concat,1-bilinear")]
        variants: String,
        #[command(flatten)]
        common: Common,
    },
    /// Write procedural grayscale scenes for desk-scale experiments.
    MakeToy {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Index of the first scene, so disjoint sets can share a seed.
        #[arg(long, default_value_t = 0)]
        first_index: u64,
    },
}

fn seed_or_config(common: &Common) -> Result<(RunConfig, u64), CliError> {
    let cfg = common.run_config()?;
    let seed = cfg.train.seed;
    Ok((cfg, seed))
}

fn write_report(out: Option<&Path>, name: &str, text: &str) -> Result<(), CliError> {
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
        let path = dir.join(name);
        rbdn_core::fsutil::write_atomic(&path, text.as_bytes())
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train(common) => {
            let report = cmd_train(&common.run_config()?)?;
            println!("final loss {:.6}", report.final_loss);
            println!("wrote {} and {}", report.checkpoint.display(), report.loss_csv.display());
        }
        Command::Infer { model, input, output, sigma, common } => {
            let (cfg, seed) = seed_or_config(&common)?;
            let report = cmd_infer(&model, &input, &output, sigma, seed, &cfg)?;
            if let Some(p) = report.psnr_in {
                println!("input psnr {p:.4} dB");
            }
            if let Some(p) = report.psnr_out {
                println!("output psnr {p:.4} dB");
            }
            println!("wrote {}", output.display());
        }
        Command::Eval { model, clean, sigmas, common } => {
            let (cfg, seed) = seed_or_config(&common)?;
            let sigmas = sigmas.as_deref().map(parse_sigmas).transpose()?.unwrap_or_else(default_sigmas);
            let path = cmd_eval(&model, &clean, &sigmas, seed, &cfg.out_dir)?;
            println!("wrote {}", path.display());
        }
        Command::Gradcheck { component, common } => {
            let (_, seed) = seed_or_config(&common)?;
            let result = cmd_gradcheck(component.as_deref(), seed);
            let text = match &result {
                Ok(t) => t.clone(),
                Err(e) => e.to_string(),
            };
            write_report(common.out.as_deref(), "gradcheck.csv", &text)?;
            print!("{}", result?);
        }
        Command::Ablate { variants, common } => {
            let cfg = common.run_config()?;
            let path = cmd_ablate(&cfg, &parse_variants(&variants)?)?;
            println!("wrote {}", path.display());
        }
        Command::MakeToy { dir, count, size, seed, first_index } => {
            cmd_make_toy(&dir, count, size, seed, first_index)?;
            println!("wrote {count} images to {}", dir.display());
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::Ok,
                _ => ExitCode::Usage,
            };
            let _ = e.print();
            process::exit(code as i32);
        }
    };
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        process::exit(e.exit_code() as i32);
    }
}

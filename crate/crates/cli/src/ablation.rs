//! Variant sweeps with identical seed, data order and budget, scored by validation MSE.

use std::fmt;
use std::str::FromStr;

use rbdn_core::graph::{build_rbdn, NetworkGraph, RbdnConfig, Variant, MAX_BRANCHES};
use rbdn_core::imaging::Image;
use rbdn_core::train::{denoise_validation_mse, stream_rng, train_loop, Objective, TrainConfig};

use crate::CliError;

/// Stream of the weight-initialization RNG, disjoint from every per-iteration stream.
pub const INIT_STREAM: u64 = u64::MAX;

/// One network in a sweep, written `K-variant` (e.g. `0-full`, `1-bilinear`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationVariant {
    pub branches: usize,
    pub variant: Variant,
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.branches, self.variant)
    }
}

impl FromStr for AblationVariant {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CliError::Usage(format!("variant '{s}' is not K-variant, e.g. 1-full or 2-no-concat"));
        let (k, v) = s.trim().split_once('-').ok_or_else(bad)?;
        let branches: usize = k.parse().map_err(|_| bad())?;
        let variant: Variant = v.parse()?;
        if branches > MAX_BRANCHES || (branches == 0 && variant != Variant::Full) {
            return Err(bad());
        }
        Ok(Self { branches, variant })
    }
}

/// Parses a comma-separated variant list, rejecting duplicates.
pub fn parse_variants(list: &str) -> Result<Vec<AblationVariant>, CliError> {
    let mut out: Vec<AblationVariant> = Vec::new();
    for part in list.split(',').filter(|p| !p.trim().is_empty()) {
        let v: AblationVariant = part.parse()?;
        if out.contains(&v) {
            return Err(CliError::Usage(format!("variant {v} listed twice")));
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(CliError::Usage("no variants given".into()));
    }
    Ok(out)
}

/// Iterations (1-based update counts) at which validation runs: every `every` updates plus the last.
pub fn validation_points(max_iters: u64, every: u64) -> Result<Vec<u64>, CliError> {
    if every == 0 {
        return Err(CliError::Usage("val_every must be positive for ablation".into()));
    }
    let mut pts: Vec<u64> = (1..=max_iters / every).map(|i| i * every).collect();
    if pts.last() != Some(&max_iters) {
        pts.push(max_iters);
    }
    if pts.len() < 2 {
        return Err(CliError::Usage(format!(
            "max_iters {max_iters} with val_every {every} gives {} validation point; at least 2 are needed",
            pts.len()
        )));
    }
    Ok(pts)
}

/// A freshly initialized network for `v`, identical across runs with the same seed.
pub fn init_network(net: &RbdnConfig, v: AblationVariant, seed: u64) -> Result<NetworkGraph<f32>, CliError> {
    let cfg = RbdnConfig { branches: v.branches, variant: v.variant, ..net.clone() };
    cfg.validate()?;
    let mut g = build_rbdn::<f32>(&cfg)?;
    g.initialize(&mut stream_rng(seed, INIT_STREAM));
    Ok(g)
}

#[derive(Debug, Clone)]
pub struct VariantRun {
    pub variant: AblationVariant,
    /// Validation MSE at each validation point.
    pub curve: Vec<f64>,
    pub graph: NetworkGraph<f32>,
}

/// Trains one variant, recording validation MSE at `points`.
#[allow(clippy::too_many_arguments)]
pub fn run_variant(
    net: &RbdnConfig,
    v: AblationVariant,
    train: &TrainConfig,
    images: &[Image],
    val: &[Image],
    val_sigma: f64,
    points: &[u64],
) -> Result<VariantRun, CliError> {
    let mut graph = init_network(net, v, train.seed)?;
    let mut curve = Vec::with_capacity(points.len());
    let mut observe = |p: &rbdn_core::train::Progress<'_>| {
        if points.contains(&(p.iteration + 1)) {
            let mse = denoise_validation_mse(p.graph, val, val_sigma, train.seed)?;
            log::info!("{v}: iteration {} validation mse {mse:.6}", p.iteration + 1);
            curve.push(mse);
        }
        Ok(())
    };
    train_loop(&mut graph, images, train, &Objective::Denoise, u64::MAX, &mut observe)?;
    Ok(VariantRun { variant: v, curve, graph })
}

/// `iteration` column then one column per variant.
pub fn ablation_csv(points: &[u64], runs: &[VariantRun]) -> String {
    let mut out = String::from("iteration");
    for r in runs {
        out.push_str(&format!(",{}", r.variant));
    }
    out.push('\n');
    for (i, it) in points.iter().enumerate() {
        out.push_str(&it.to_string());
        for r in runs {
            out.push_str(&format!(",{:.8e}", r.curve[i]));
        }
        out.push('\n');
    }
    out
}

use std::fmt;
use std::str::FromStr;

use super::{Optimizer, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Mse,
    WeightedSoftmax,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::WeightedSoftmax => "weighted-softmax",
        }
    }
}

impl FromStr for LossKind {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "weighted-softmax" => Ok(LossKind::WeightedSoftmax),
            other => Err(TrainError::Config(format!("unknown loss '{other}' (mse, weighted-softmax)"))),
        }
    }
}

/// Optimization hyperparameters. Defaults are the large-scale denoising settings; desk-scale
/// runs override the learning rate and budget.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub lr_gamma: f64,
    pub lr_step: u64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub crop_size: usize,
    pub max_iters: u64,
    /// `[lo, hi]` in 8-bit intensity units.
    pub noise_sigma_range: (f64, f64),
    pub seed: u64,
    pub optimizer: Optimizer,
    pub loss: LossKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-7,
            lr_gamma: 0.1,
            lr_step: 100_000,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 64,
            crop_size: 128,
            max_iters: 500_000,
            noise_sigma_range: (8.0, 50.0),
            seed: 0,
            optimizer: Optimizer::Sgd,
            loss: LossKind::Mse,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &[
        "base_lr",
        "lr_gamma",
        "lr_step",
        "momentum",
        "weight_decay",
        "batch_size",
        "crop_size",
        "max_iters",
        "noise_sigma_range",
        "seed",
        "optimizer",
        "loss",
        "adam_beta1",
        "adam_beta2",
        "adam_eps",
    ];

    /// Checks ranges; `divisibility` is the network's required spatial multiple.
    pub fn validate(&self, divisibility: usize) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        let (lo, hi) = self.noise_sigma_range;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("noise_sigma_range must satisfy 0 <= lo <= hi, got [{lo}, {hi}]"));
        }
        if self.crop_size == 0 || !self.crop_size.is_multiple_of(divisibility) {
            return bad(format!("crop_size {} must be a positive multiple of {divisibility}", self.crop_size));
        }
        if !(self.base_lr > 0.0 && self.lr_gamma > 0.0 && self.base_lr.is_finite()) {
            return bad("base_lr and lr_gamma must be positive".into());
        }
        if self.lr_step == 0 || self.batch_size == 0 || self.max_iters == 0 {
            return bad("lr_step, batch_size and max_iters must be positive".into());
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return bad("momentum must be in [0, 1) and weight_decay non-negative".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return bad("adam betas must be in [0, 1) and adam_eps positive".into());
        }
        Ok(())
    }

    /// Applies one `key = value` pair. Returns `Ok(false)` for keys this config does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, TrainError> {
        fn parse<V: FromStr>(key: &str, value: &str) -> Result<V, TrainError> {
            value.parse().map_err(|_| TrainError::Config(format!("{key}: cannot parse '{value}'")))
        }
        match key {
            "base_lr" => self.base_lr = parse(key, value)?,
            "lr_gamma" => self.lr_gamma = parse(key, value)?,
            "lr_step" => self.lr_step = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "crop_size" => self.crop_size = parse(key, value)?,
            "max_iters" => self.max_iters = parse(key, value)?,
            "noise_sigma_range" => {
                let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                self.noise_sigma_range = match parts[..] {
                    [s] => (parse(key, s)?, parse(key, s)?),
                    [lo, hi] => (parse(key, lo)?, parse(key, hi)?),
                    _ => return Err(TrainError::Config(format!("{key}: expected 'lo, hi', got '{value}'"))),
                };
            }
            "seed" => self.seed = parse(key, value)?,
            "optimizer" => self.optimizer = value.parse()?,
            "loss" => self.loss = value.parse()?,
            "adam_beta1" => self.adam_beta1 = parse(key, value)?,
            "adam_beta2" => self.adam_beta2 = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_text(&self) -> String {
        let (lo, hi) = self.noise_sigma_range;
        format!(
            "base_lr = {}\nlr_gamma = {}\nlr_step = {}\nmomentum = {}\nweight_decay = {}\nbatch_size = {}\n\
             crop_size = {}\nmax_iters = {}\nnoise_sigma_range = {lo}, {hi}\nseed = {}\noptimizer = {}\n\
             loss = {}\nadam_beta1 = {}\nadam_beta2 = {}\nadam_eps = {}\n",
            self.base_lr,
            self.lr_gamma,
            self.lr_step,
            self.momentum,
            self.weight_decay,
            self.batch_size,
            self.crop_size,
            self.max_iters,
            self.seed,
            self.optimizer,
            self.loss,
            self.adam_beta1,
            self.adam_beta2,
            self.adam_eps
        )
    }
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

//! The run configuration: architecture, optimization, task and paths as flat `key = value` text.

use std::fs;
use std::path::{Path, PathBuf};

use rbdn_core::graph::{parse_key_values, RbdnConfig};
use rbdn_core::imaging::{build_ab_quantizer, AbQuantizer, ImagingError};
use rbdn_core::train::{Objective, Task, TrainConfig};

use crate::CliError;

/// Which ab codebook the colorize-lab task uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Codebook {
    /// The gamut sweep, accepted only if it has the required bin count.
    Strict,
    /// The gamut sweep with whatever bin count it yields.
    Sweep,
}

/// Keys owned by [`RunConfig`] itself, on top of the architecture and training keys.
pub const RUN_KEYS: &[&str] = &[
    "task",
    "train_dir",
    "val_dir",
    "out_dir",
    "log_every",
    "val_every",
    "val_sigma",
    "temperature",
    "ab_codebook",
    "class_weights_file",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub net: RbdnConfig,
    pub train: TrainConfig,
    pub task: Task,
    pub train_dir: Option<PathBuf>,
    pub val_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Loss-curve sampling interval in iterations.
    pub log_every: u64,
    /// Validation interval in iterations; 0 disables periodic validation.
    pub val_every: u64,
    /// Noise level (8-bit units) of the denoising validation set.
    pub val_sigma: f64,
    /// Annealed-mean temperature for colorize-lab inference.
    pub temperature: f64,
    pub ab_codebook: Codebook,
    /// One weight per ab bin, whitespace separated; uniform when absent.
    pub class_weights_file: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            net: RbdnConfig::default(),
            train: TrainConfig::default(),
            task: Task::Denoise,
            train_dir: None,
            val_dir: None,
            out_dir: PathBuf::from("out"),
            log_every: 100,
            val_every: 0,
            val_sigma: 25.0,
            temperature: 0.38,
            ab_codebook: Codebook::Strict,
            class_weights_file: None,
        }
    }
}

/// Every accepted key, in documentation order.
pub fn valid_keys() -> Vec<&'static str> {
    RbdnConfig::KEYS.iter().chain(TrainConfig::KEYS).chain(RUN_KEYS).copied().collect()
}

fn parse_num<V: std::str::FromStr>(key: &str, value: &str) -> Result<V, CliError> {
    value.parse().map_err(|_| CliError::Usage(format!("{key}: cannot parse '{value}'")))
}

impl RunConfig {
    /// Applies one pair. Unknown keys fail with the list of valid ones.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        if self.net.set(key, value)? || self.train.set(key, value)? {
            return Ok(());
        }
        match key {
            "task" => self.task = value.parse()?,
            "train_dir" => self.train_dir = Some(PathBuf::from(value)),
            "val_dir" => self.val_dir = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "log_every" => self.log_every = parse_num(key, value)?,
            "val_every" => self.val_every = parse_num(key, value)?,
            "val_sigma" => self.val_sigma = parse_num(key, value)?,
            "temperature" => self.temperature = parse_num(key, value)?,
            "ab_codebook" => {
                self.ab_codebook = match value {
                    "strict" => Codebook::Strict,
                    "sweep" => Codebook::Sweep,
                    other => return Err(CliError::Usage(format!("ab_codebook: '{other}' is not strict or sweep"))),
                }
            }
            "class_weights_file" => self.class_weights_file = Some(PathBuf::from(value)),
            _ => {
                return Err(CliError::Usage(format!(
                    "unknown config key '{key}'; valid keys: {}",
                    valid_keys().join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Defaults overridden by the pairs in `text`.
    pub fn from_text(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (line, key, value) in parse_key_values(text)? {
            cfg.set(&key, &value).map_err(|e| CliError::Usage(format!("line {line}: {e}")))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), CliError> {
        for o in overrides {
            let (k, v) =
                o.split_once('=').ok_or_else(|| CliError::Usage(format!("override '{o}' is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let mut out = format!("task = {}\n", self.task);
        out.push_str(&self.net.to_text());
        out.push_str(&self.train.to_text());
        for (k, v) in [("train_dir", path(&self.train_dir)), ("val_dir", path(&self.val_dir))] {
            if let Some(v) = v {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out.push_str(&format!(
            "out_dir = {}\nlog_every = {}\nval_every = {}\nval_sigma = {}\ntemperature = {}\nab_codebook = {}\n",
            self.out_dir.display(),
            self.log_every,
            self.val_every,
            self.val_sigma,
            self.temperature,
            match self.ab_codebook {
                Codebook::Strict => "strict",
                Codebook::Sweep => "sweep",
            }
        ));
        if let Some(p) = &self.class_weights_file {
            out.push_str(&format!("class_weights_file = {}\n", p.display()));
        }
        out
    }

    pub fn quantizer(&self) -> Result<AbQuantizer, CliError> {
        match self.ab_codebook {
            Codebook::Sweep => Ok(AbQuantizer::standard_sweep()),
            Codebook::Strict => build_ab_quantizer().map_err(|e| match e {
                ImagingError::QuantizerCount { .. } => {
                    CliError::Usage(format!("{e}; set ab_codebook = sweep to accept the sweep's codebook"))
                }
                other => other.into(),
            }),
        }
    }

    /// The task with the data its loss needs.
    pub fn objective(&self) -> Result<Objective, CliError> {
        Ok(match self.task {
            Task::Denoise => Objective::Denoise,
            Task::ColorizeYcbcr => Objective::ColorizeYcbcr,
            Task::ColorizeLab => {
                let quantizer = self.quantizer()?;
                let class_weights = match &self.class_weights_file {
                    None => vec![1.0; quantizer.len()],
                    Some(p) => {
                        let text =
                            fs::read_to_string(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
                        let w = text
                            .split_whitespace()
                            .map(|t| parse_num::<f64>("class_weights_file", t))
                            .collect::<Result<Vec<_>, _>>()?;
                        if w.len() != quantizer.len() || w.iter().any(|v| !(*v >= 0.0)) {
                            return Err(CliError::Data(format!(
                                "{}: need {} non-negative weights, found {}",
                                p.display(),
                                quantizer.len(),
                                w.len()
                            )));
                        }
                        w
                    }
                };
                Objective::ColorizeLab { quantizer, class_weights }
            }
        })
    }

    /// Architecture, optimization and task/channel consistency.
    pub fn validate(&self) -> Result<Objective, CliError> {
        self.net.validate()?;
        self.train.validate(self.net.divisibility())?;
        let objective = self.objective()?;
        let (i, o) = objective.channels();
        if (self.net.in_channels, self.net.out_channels) != (i, o) {
            return Err(CliError::Usage(format!(
                "task '{}' needs in_channels = {i} and out_channels = {o}, config has {} and {}",
                self.task, self.net.in_channels, self.net.out_channels
            )));
        }
        if self.train.loss != self.task.loss() {
            return Err(CliError::Usage(format!("task '{}' needs loss = {}", self.task, self.task.loss())));
        }
        if !(self.temperature > 0.0) {
            return Err(CliError::Usage("temperature must be positive".into()));
        }
        if !(self.val_sigma >= 0.0) {
            return Err(CliError::Usage("val_sigma must be non-negative".into()));
        }
        Ok(objective)
    }

    /// Existing training directory, as required at launch.
    pub fn require_train_dir(&self) -> Result<&Path, CliError> {
        let dir = self.train_dir.as_deref().ok_or_else(|| CliError::Usage("train_dir is not set".into()))?;
        if !dir.is_dir() {
            return Err(CliError::Data(format!("train_dir {} does not exist", dir.display())));
        }
        Ok(dir)
    }

    /// The validation directory if set, which must then exist.
    pub fn existing_val_dir(&self) -> Result<Option<&Path>, CliError> {
        match self.val_dir.as_deref() {
            Some(d) if !d.is_dir() => Err(CliError::Data(format!("val_dir {} does not exist", d.display()))),
            other => Ok(other),
        }
    }
}

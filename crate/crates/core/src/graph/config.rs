//! Architecture hyperparameters and the flat `key = value` text format they serialize to.

use std::fmt;
use std::str::FromStr;

use super::GraphError;

/// Architectural variant: the full network or one of the two ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    /// Branch outputs replace (rather than join) the map they tap; the network is one path.
    NoConcat,
    /// Branch upsampling is fixed bilinear interpolation instead of unpool + deconv.
    Bilinear,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoConcat => "no-concat",
            Variant::Bilinear => "bilinear",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Variant::Full),
            "no-concat" | "noconcat" => Ok(Variant::NoConcat),
            "bilinear" | "bilinear-upsample" => Ok(Variant::Bilinear),
            other => Err(GraphError::InvalidConfig(format!("unknown variant '{other}'"))),
        }
    }
}

pub const MAX_BRANCHES: usize = 8;

/// `K-c-T-D` style description of an RBDN plus its I/O widths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RbdnConfig {
    pub branches: usize,
    pub patch_kernel: usize,
    pub channels: usize,
    pub transform_kernel: usize,
    pub depth: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub variant: Variant,
}

impl Default for RbdnConfig {
    /// The 9-64-3-9 base network on single-channel images.
    fn default() -> Self {
        Self {
            branches: 0,
            patch_kernel: 9,
            channels: 64,
            transform_kernel: 3,
            depth: 9,
            in_channels: 1,
            out_channels: 1,
            variant: Variant::Full,
        }
    }
}

impl RbdnConfig {
    pub fn with_branches(mut self, k: usize) -> Self {
        self.branches = k;
        self
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        let bad = |m: String| Err(GraphError::InvalidConfig(m));
        if self.patch_kernel.is_multiple_of(2) || self.transform_kernel.is_multiple_of(2) {
            return bad(format!(
                "kernels must be odd (patch {}, transform {})",
                self.patch_kernel, self.transform_kernel
            ));
        }
        if self.branches > MAX_BRANCHES {
            return bad(format!("at most {MAX_BRANCHES} branches, got {}", self.branches));
        }
        if self.channels == 0 || self.depth == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return bad("channels, depth and I/O widths must be positive".into());
        }
        if self.branches == 0 && self.variant != Variant::Full {
            return bad(format!("variant '{}' needs at least one branch", self.variant));
        }
        Ok(())
    }

    /// Spatial dims must be multiples of this: one stride-2 pool per level.
    pub fn divisibility(&self) -> usize {
        1 << (self.branches + 1)
    }

    pub fn to_text(&self) -> String {
        format!(
            "branches = {}\npatch_kernel = {}\nchannels = {}\ntransform_kernel = {}\ndepth = {}\n\
             in_channels = {}\nout_channels = {}\nvariant = {}\n",
            self.branches,
            self.patch_kernel,
            self.channels,
            self.transform_kernel,
            self.depth,
            self.in_channels,
            self.out_channels,
            self.variant
        )
    }

    /// Applies one `key = value` pair. Returns `Ok(false)` if the key is not an architecture key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, GraphError> {
        let num = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| GraphError::InvalidConfig(format!("{key}: expected a non-negative integer, got '{v}'")))
        };
        match key {
            "branches" => self.branches = num(value)?,
            "patch_kernel" => self.patch_kernel = num(value)?,
            "channels" => self.channels = num(value)?,
            "transform_kernel" => self.transform_kernel = num(value)?,
            "depth" => self.depth = num(value)?,
            "in_channels" => self.in_channels = num(value)?,
            "out_channels" => self.out_channels = num(value)?,
            "variant" => self.variant = value.parse()?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub const KEYS: &'static [&'static str] = &[
        "branches",
        "patch_kernel",
        "channels",
        "transform_kernel",
        "depth",
        "in_channels",
        "out_channels",
        "variant",
    ];

    /// Parses the output of [`Self::to_text`]. Every key is required and no others are allowed.
    pub fn from_text(text: &str) -> Result<Self, GraphError> {
        let mut cfg = RbdnConfig::default();
        let mut seen = Vec::new();
        for (line, key, value) in parse_key_values(text)? {
            if !cfg.set(&key, &value)? {
                return Err(GraphError::InvalidConfig(format!("line {line}: unknown key '{key}'")));
            }
            if seen.contains(&key) {
                return Err(GraphError::InvalidConfig(format!("line {line}: duplicate key '{key}'")));
            }
            seen.push(key);
        }
        if let Some(missing) = Self::KEYS.iter().find(|k| !seen.iter().any(|s| s == *k)) {
            return Err(GraphError::InvalidConfig(format!("missing key '{missing}'")));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Splits `key = value` lines, skipping blanks and `#` comments. Yields `(line, key, value)`.
pub fn parse_key_values(text: &str) -> Result<Vec<(usize, String, String)>, GraphError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(GraphError::InvalidConfig(format!("line {}: expected 'key = value'", i + 1)));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(GraphError::InvalidConfig(format!("line {}: empty key", i + 1)));
        }
        out.push((i + 1, k.to_string(), v.to_string()));
    }
    Ok(out)
}

//! Plain-text `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional, unknown or repeated keys are rejected, and each value is
//! checked as soon as it is read so errors point at the offending line.

use std::collections::HashMap;
use std::path::PathBuf;

use crate::data::AugmentConfig;
use crate::error::{Error, Result};
use crate::nn::{ArchConfig, NetworkSpec};
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchKind {
    Chebyshev,
    Standard,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub arch: ArchConfig,
    pub arch_kind: ArchKind,
    pub side: usize,
    pub augment: AugmentConfig,
    pub data_dir: Option<PathBuf>,
    pub val_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            arch: ArchConfig::default(),
            arch_kind: ArchKind::Chebyshev,
            side: 128,
            augment: AugmentConfig::default(),
            data_dir: None,
            val_fraction: 0.2,
        }
    }
}

/// Every accepted key, in the order [`RunConfig::render`] writes them.
pub const KEYS: &[&str] = &[
    "learning_rate",
    "beta1",
    "beta2",
    "epsilon",
    "weight_decay",
    "dropout",
    "patience",
    "max_epochs",
    "batch_size",
    "seed",
    "classes",
    "bias_correction",
    "arch",
    "side",
    "conv1_filters",
    "conv1_order",
    "conv2_filters",
    "conv2_order",
    "dense_width",
    "augment_rotate",
    "rotation_deg",
    "augment_scale",
    "scale_min",
    "scale_max",
    "augment_flip",
    "hflip_prob",
    "vflip_prob",
    "augment_noise",
    "noise_sigma",
    "data_dir",
    "val_fraction",
];

type SetResult = std::result::Result<(), String>;

fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse `{v}`"))
}

fn real(v: &str, ok: impl Fn(f64) -> bool, rule: &str) -> std::result::Result<f64, String> {
    let x: f64 = num(v)?;
    if x.is_finite() && ok(x) {
        Ok(x)
    } else {
        Err(format!("{x} violates {rule}"))
    }
}

fn count(v: &str, min: usize) -> std::result::Result<usize, String> {
    let x: usize = num(v)?;
    if x >= min {
        Ok(x)
    } else {
        Err(format!("must be at least {min}"))
    }
}

fn flag(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

fn unit(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

fn half_open(x: f64) -> bool {
    (0.0..1.0).contains(&x)
}

/// Drops a `#` comment that starts the line or follows whitespace, so a
/// `#` inside a value such as a path survives.
fn strip_comment(line: &str) -> &str {
    let bytes = line.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'#' && (i == 0 || bytes[i - 1].is_ascii_whitespace()) {
            return &line[..i];
        }
    }
    line
}

impl RunConfig {
    fn set(&mut self, key: &str, v: &str) -> SetResult {
        let t = &mut self.train;
        let a = &mut self.augment;
        match key {
            "learning_rate" => t.learning_rate = real(v, |x| x > 0.0, "0 < learning_rate")?,
            "beta1" => t.beta1 = real(v, half_open, "0 <= beta1 < 1")?,
            "beta2" => t.beta2 = real(v, half_open, "0 <= beta2 < 1")?,
            "epsilon" => t.epsilon = real(v, |x| x > 0.0, "epsilon > 0")?,
            "weight_decay" => t.weight_decay = real(v, |x| x >= 0.0, "weight_decay >= 0")?,
            "dropout" => t.dropout = real(v, half_open, "0 <= dropout < 1")?,
            "patience" => t.patience = count(v, 1)?,
            "max_epochs" => t.max_epochs = count(v, 1)?,
            "batch_size" => t.batch_size = count(v, 1)?,
            "seed" => t.seed = num(v)?,
            "classes" => t.classes = count(v, 2)?,
            "bias_correction" => t.bias_correction = flag(v)?,
            "arch" => {
                self.arch_kind = match v {
                    "chebyshev" => ArchKind::Chebyshev,
                    "standard" => ArchKind::Standard,
                    _ => return Err(format!("expected chebyshev or standard, got `{v}`")),
                }
            }
            "side" => {
                let s = count(v, 4)?;
                if s % 4 != 0 {
                    return Err(format!("{s} is not divisible by 4 (two 2x2 pools)"));
                }
                self.side = s;
            }
            "conv1_filters" => self.arch.conv1_filters = count(v, 1)?,
            "conv1_order" => self.arch.conv1_order = num(v)?,
            "conv2_filters" => self.arch.conv2_filters = count(v, 1)?,
            "conv2_order" => self.arch.conv2_order = num(v)?,
            "dense_width" => self.arch.dense_width = count(v, 1)?,
            "augment_rotate" => a.rotate = flag(v)?,
            "rotation_deg" => a.rotation_deg = real(v, |x| x >= 0.0, "rotation_deg >= 0")?,
            "augment_scale" => a.scale = flag(v)?,
            "scale_min" => a.scale_min = real(v, |x| x > 0.0, "scale_min > 0")?,
            "scale_max" => a.scale_max = real(v, |x| x > 0.0, "scale_max > 0")?,
            "augment_flip" => a.flip = flag(v)?,
            "hflip_prob" => a.hflip_prob = real(v, unit, "0 <= hflip_prob <= 1")?,
            "vflip_prob" => a.vflip_prob = real(v, unit, "0 <= vflip_prob <= 1")?,
            "augment_noise" => a.noise = flag(v)?,
            "noise_sigma" => a.noise_sigma = real(v, |x| x >= 0.0, "noise_sigma >= 0")?,
            "data_dir" => self.data_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "val_fraction" => self.val_fraction = real(v, |x| x > 0.0 && x < 1.0, "0 < val_fraction < 1")?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let t = &self.train;
        let a = &self.augment;
        match key {
            "learning_rate" => t.learning_rate.to_string(),
            "beta1" => t.beta1.to_string(),
            "beta2" => t.beta2.to_string(),
            "epsilon" => t.epsilon.to_string(),
            "weight_decay" => t.weight_decay.to_string(),
            "dropout" => t.dropout.to_string(),
            "patience" => t.patience.to_string(),
            "max_epochs" => t.max_epochs.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "seed" => t.seed.to_string(),
            "classes" => t.classes.to_string(),
            "bias_correction" => t.bias_correction.to_string(),
            "arch" => match self.arch_kind {
                ArchKind::Chebyshev => "chebyshev".into(),
                ArchKind::Standard => "standard".into(),
            },
            "side" => self.side.to_string(),
            "conv1_filters" => self.arch.conv1_filters.to_string(),
            "conv1_order" => self.arch.conv1_order.to_string(),
            "conv2_filters" => self.arch.conv2_filters.to_string(),
            "conv2_order" => self.arch.conv2_order.to_string(),
            "dense_width" => self.arch.dense_width.to_string(),
            "augment_rotate" => a.rotate.to_string(),
            "rotation_deg" => a.rotation_deg.to_string(),
            "augment_scale" => a.scale.to_string(),
            "scale_min" => a.scale_min.to_string(),
            "scale_max" => a.scale_max.to_string(),
            "augment_flip" => a.flip.to_string(),
            "hflip_prob" => a.hflip_prob.to_string(),
            "vflip_prob" => a.vflip_prob.to_string(),
            "augment_noise" => a.noise.to_string(),
            "noise_sigma" => a.noise_sigma.to_string(),
            "data_dir" => self
                .data_dir
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
            "val_fraction" => self.val_fraction.to_string(),
            _ => unreachable!("key list and getter disagree on `{key}`"),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen: HashMap<String, usize> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = strip_comment(raw).trim();
            if trimmed.is_empty() {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| Error::Config {
                line,
                key: trimmed.to_string(),
                message: "expected `key = value`".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if let Some(prev) = seen.insert(key.to_string(), line) {
                return Err(Error::Config {
                    line,
                    key: key.into(),
                    message: format!("already set on line {prev}"),
                });
            }
            cfg.set(key, value).map_err(|message| Error::Config {
                line,
                key: key.into(),
                message,
            })?;
        }
        let line_of = |k: &str| seen.get(k).copied().unwrap_or(0);
        if cfg.augment.scale_min > cfg.augment.scale_max {
            return Err(Error::Config {
                line: line_of("scale_max").max(line_of("scale_min")),
                key: "scale_max".into(),
                message: format!(
                    "scale_min {} exceeds scale_max {}",
                    cfg.augment.scale_min, cfg.augment.scale_max
                ),
            });
        }
        if let Err(e) = cfg.network_spec().shape_ledger() {
            return Err(Error::Config {
                line: line_of("side"),
                key: "side".into(),
                message: e.to_string(),
            });
        }
        Ok(cfg)
    }

    /// Every key with its current value; parses back to an equal config.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, key) in KEYS.iter().enumerate() {
            match i {
                0 => out.push_str("# training\n"),
                12 => out.push_str("\n# network\n"),
                19 => out.push_str("\n# augmentation\n"),
                29 => out.push_str("\n# data\n"),
                _ => {}
            }
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&self.get(key));
            out.push('\n');
        }
        out
    }

    pub fn network_spec(&self) -> NetworkSpec {
        let arch = ArchConfig {
            dropout: self.train.dropout,
            ..self.arch.clone()
        };
        let spec = NetworkSpec::cheb_cnn(self.side, self.train.classes, &arch);
        match self.arch_kind {
            ArchKind::Chebyshev => spec,
            ArchKind::Standard => spec.standard_conv(),
        }
    }
}

//! Flat `key = value` configuration.
//!
//! Settings are resolved from layers applied in order: built-in defaults,
//! then a config file, then `--set` overrides, then dedicated flags. Unknown
//! keys are errors. `#` starts a comment line.

use std::path::PathBuf;
use std::str::FromStr;

use qamatch::data::{SynthConfig, PRESETS};
use qamatch::TrainConfig;

use crate::error::{CliError, Result};

/// Ordered `(key, value)` pairs from one source.
pub type Layer = Vec<(String, String)>;

pub fn parse_config(text: &str, source_name: &str) -> Result<Layer> {
    let mut out: Layer = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let syntax = |reason: &str| CliError::ConfigSyntax {
            source_name: source_name.to_string(),
            line: i + 1,
            reason: reason.to_string(),
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| syntax("expected `key = value`"))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(syntax("empty key"));
        }
        if out.iter().any(|(k, _)| k == key) {
            return Err(syntax(&format!("duplicate key `{key}`")));
        }
        out.push((key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

/// Parses a `--set key=value` argument.
pub fn parse_assignment(arg: &str) -> Result<(String, String)> {
    let (k, v) = arg
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got `{arg}`")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

pub fn render(entries: &[(&'static str, String)]) -> String {
    entries
        .iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect()
}

/// A command's resolved settings.
pub trait Settings: Sized {
    const KEYS: &'static [&'static str];

    fn defaults() -> Self;

    fn set(&mut self, key: &str, value: &str) -> Result<()>;

    /// Every key with its resolved value, in `KEYS` order.
    fn entries(&self) -> Vec<(&'static str, String)>;

    fn resolve(layers: &[Layer]) -> Result<Self> {
        let mut s = Self::defaults();
        for (k, v) in layers.iter().flatten() {
            s.set(k, v)?;
        }
        Ok(s)
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse()
        .map_err(|e: T::Err| CliError::value(key, format!("`{v}`: {e}")))
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(CliError::value(key, format!("`{v}` is not true or false"))),
    }
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|item| num(key, item.trim())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub config: TrainConfig,
    pub train_data: Option<PathBuf>,
    pub validation_data: Option<PathBuf>,
    pub truth: Option<PathBuf>,
}

impl Settings for TrainSettings {
    const KEYS: &'static [&'static str] = &[
        "train_data",
        "validation_data",
        "truth",
        "seed",
        "temperature",
        "alpha",
        "beta",
        "window",
        "lr",
        "momentum",
        "labeled_batch",
        "unlabeled_batch",
        "iterations",
        "hidden",
        "rebalance",
        "calibration",
        "softmix",
        "anchor",
        "supervised_only",
        "scale_bs",
        "scale_m",
        "scale_c",
        "normalize_weights",
        "eval_interval",
        "exec",
    ];

    fn defaults() -> Self {
        Self {
            config: TrainConfig::default(),
            train_data: None,
            validation_data: None,
            truth: None,
        }
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let c = &mut self.config;
        match key {
            "train_data" => self.train_data = path(v),
            "validation_data" => self.validation_data = path(v),
            "truth" => self.truth = path(v),
            "seed" => c.seed = num(key, v)?,
            "temperature" => c.temperature = num(key, v)?,
            "alpha" => c.alpha = num(key, v)?,
            "beta" => c.beta = num(key, v)?,
            "window" => c.window = num(key, v)?,
            "lr" => c.lr = num(key, v)?,
            "momentum" => c.momentum = num(key, v)?,
            "labeled_batch" => c.labeled_batch = num(key, v)?,
            "unlabeled_batch" => c.unlabeled_batch = num(key, v)?,
            "iterations" => c.iterations = num(key, v)?,
            "hidden" => c.hidden = list(key, v)?,
            "rebalance" => c.rebalance = boolean(key, v)?,
            "calibration" => c.calibration = boolean(key, v)?,
            "softmix" => c.softmix = boolean(key, v)?,
            "anchor" => c.anchor = boolean(key, v)?,
            "supervised_only" => c.supervised_only = boolean(key, v)?,
            "scale_bs" => c.scale_bs = num(key, v)?,
            "scale_m" => c.scale_m = num(key, v)?,
            "scale_c" => c.scale_c = num(key, v)?,
            "normalize_weights" => c.normalize_weights = boolean(key, v)?,
            "eval_interval" => c.eval_interval = num(key, v)?,
            "exec" => c.exec = num(key, v)?,
            _ => return Err(CliError::value(key, "unknown key for `train`")),
        }
        Ok(())
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        let c = &self.config;
        let value = |key: &str| -> String {
            match key {
                "train_data" => show_path(&self.train_data),
                "validation_data" => show_path(&self.validation_data),
                "truth" => show_path(&self.truth),
                "seed" => c.seed.to_string(),
                "temperature" => c.temperature.to_string(),
                "alpha" => c.alpha.to_string(),
                "beta" => c.beta.to_string(),
                "window" => c.window.to_string(),
                "lr" => c.lr.to_string(),
                "momentum" => c.momentum.to_string(),
                "labeled_batch" => c.labeled_batch.to_string(),
                "unlabeled_batch" => c.unlabeled_batch.to_string(),
                "iterations" => c.iterations.to_string(),
                "hidden" => join(&c.hidden),
                "rebalance" => c.rebalance.to_string(),
                "calibration" => c.calibration.to_string(),
                "softmix" => c.softmix.to_string(),
                "anchor" => c.anchor.to_string(),
                "supervised_only" => c.supervised_only.to_string(),
                "scale_bs" => c.scale_bs.to_string(),
                "scale_m" => c.scale_m.to_string(),
                "scale_c" => c.scale_c.to_string(),
                "normalize_weights" => c.normalize_weights.to_string(),
                "eval_interval" => c.eval_interval.to_string(),
                "exec" => c.exec.to_string(),
                _ => unreachable!("key list and renderer disagree on `{key}`"),
            }
        };
        Self::KEYS.iter().map(|k| (*k, value(k))).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateSettings {
    pub preset: String,
    pub synth: SynthConfig,
}

impl GenerateSettings {
    fn from_preset(name: &str) -> Result<Self> {
        let synth = SynthConfig::preset(name).ok_or_else(|| {
            CliError::value(
                "preset",
                format!("`{name}` is not one of {}", PRESETS.join(", ")),
            )
        })?;
        Ok(Self {
            preset: name.to_string(),
            synth,
        })
    }
}

impl Settings for GenerateSettings {
    const KEYS: &'static [&'static str] = &[
        "preset",
        "seed",
        "class_names",
        "d",
        "n_max_labeled",
        "gamma_labeled",
        "n_max_unlabeled",
        "gamma_unlabeled",
        "labeled_counts",
        "unlabeled_counts",
        "validation_counts",
        "test_counts",
        "separation",
        "noise_sigma",
        "aug_sigma",
    ];

    fn defaults() -> Self {
        Self::from_preset(PRESETS[0]).expect("built-in preset")
    }

    /// The last `preset` in any layer picks the base; other keys then apply
    /// in layer order, wherever the preset appeared.
    fn resolve(layers: &[Layer]) -> Result<Self> {
        let preset = layers.iter().flatten().rfind(|(k, _)| k == "preset");
        let mut s = match preset {
            Some((_, name)) => Self::from_preset(name)?,
            None => Self::defaults(),
        };
        for (k, v) in layers.iter().flatten().filter(|(k, _)| k != "preset") {
            s.set(k, v)?;
        }
        Ok(s)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let c = &mut self.synth;
        let counts = |v: &str| -> Result<Option<Vec<usize>>> {
            if v == "auto" {
                Ok(None)
            } else {
                list(key, v).map(Some)
            }
        };
        match key {
            "preset" => *self = Self::from_preset(v)?,
            "seed" => c.seed = num(key, v)?,
            "class_names" => c.class_names = v.split(',').map(|s| s.trim().to_string()).collect(),
            "d" => c.d = num(key, v)?,
            "n_max_labeled" => c.n_max_labeled = num(key, v)?,
            "gamma_labeled" => c.gamma_labeled = num(key, v)?,
            "n_max_unlabeled" => c.n_max_unlabeled = num(key, v)?,
            "gamma_unlabeled" => c.gamma_unlabeled = num(key, v)?,
            "labeled_counts" => c.labeled_counts = counts(v)?,
            "unlabeled_counts" => c.unlabeled_counts = counts(v)?,
            "validation_counts" => c.validation_counts = list(key, v)?,
            "test_counts" => c.test_counts = list(key, v)?,
            "separation" => c.separation = num(key, v)?,
            "noise_sigma" => c.noise_sigma = num(key, v)?,
            "aug_sigma" => c.aug_sigma = num(key, v)?,
            _ => return Err(CliError::value(key, "unknown key for `generate`")),
        }
        Ok(())
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        let c = &self.synth;
        let counts =
            |v: &Option<Vec<usize>>| v.as_ref().map(|v| join(v)).unwrap_or_else(|| "auto".into());
        let value = |key: &str| -> String {
            match key {
                "preset" => self.preset.clone(),
                "seed" => c.seed.to_string(),
                "class_names" => c.class_names.join(","),
                "d" => c.d.to_string(),
                "n_max_labeled" => c.n_max_labeled.to_string(),
                "gamma_labeled" => c.gamma_labeled.to_string(),
                "n_max_unlabeled" => c.n_max_unlabeled.to_string(),
                "gamma_unlabeled" => c.gamma_unlabeled.to_string(),
                "labeled_counts" => counts(&c.labeled_counts),
                "unlabeled_counts" => counts(&c.unlabeled_counts),
                "validation_counts" => join(&c.validation_counts),
                "test_counts" => join(&c.test_counts),
                "separation" => c.separation.to_string(),
                "noise_sigma" => c.noise_sigma.to_string(),
                "aug_sigma" => c.aug_sigma.to_string(),
                _ => unreachable!("key list and renderer disagree on `{key}`"),
            }
        };
        Self::KEYS.iter().map(|k| (*k, value(k))).collect()
    }
}

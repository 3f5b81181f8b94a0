//! Flat key=value configuration with dotted namespaces.
//!
//! A config file is a sequence of `namespace.key = value` lines (blank lines
//! and `#` comments ignored). Flag overrides use the same key syntax, so one
//! merge path serves both. Unknown keys are errors — a typo must never
//! silently fall back to a default. The fully merged configuration hashes to
//! a hex digest that every artifact embeds alongside the seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::{SelectOn, TrainConfig};

/// Robustness-harness settings (`robust.*`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustSection {
    pub sigmas: Vec<f64>,
    pub reps: u64,
    pub noise_seed: u64,
}

impl Default for RobustSection {
    fn default() -> Self {
        RobustSection { sigmas: vec![0.0, 0.05, 0.1], reps: 1, noise_seed: 99 }
    }
}

/// Speed-benchmark settings (`bench.*`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchSection {
    pub image_size: usize,
    pub fixations: usize,
    pub sigma: f64,
    pub reps: usize,
    pub threshold: f64,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection { image_size: 3000, fixations: 1000, sigma: 150.0, reps: 10, threshold: 10.0 }
    }
}

/// The merged run configuration; serialized into every output artifact.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub robust: RobustSection,
    pub bench: BenchSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let seed = 0;
        let mut train = TrainConfig::default();
        train.seed = seed;
        let mut synth = SynthConfig::default();
        synth.seed = seed;
        RunConfig {
            seed,
            model: ModelConfig::default(),
            train,
            synth,
            robust: RobustSection::default(),
            bench: BenchSection::default(),
        }
    }
}

impl RunConfig {
    /// Hex digest of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("RunConfig always serializes");
        let digest = Sha256::digest(json.as_bytes());
        let mut out = String::with_capacity(64);
        for b in digest {
            write!(out, "{b:02x}").expect("writing to String cannot fail");
        }
        out
    }
}

/// Parsed key=value lines with consumption tracking: every key must be read
/// by exactly one typed getter or the build fails as unknown.
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
    consumed: BTreeMap<String, bool>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{line}`", lineno + 1))
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
            }
            if entries.insert(key.clone(), value).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", lineno + 1)));
            }
        }
        let consumed = entries.keys().map(|k| (k.clone(), false)).collect();
        Ok(ConfigMap { entries, consumed })
    }

    /// Merges override pairs (`key=value` strings) over the file entries;
    /// overrides may introduce keys or replace them.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for item in overrides {
            let (key, value) = item.split_once('=').ok_or_else(|| {
                Error::Config(format!("override `{item}` is not of the form key=value"))
            })?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config(format!("override `{item}` has an empty key")));
            }
            self.consumed.insert(key.clone(), false);
            self.entries.insert(key, value.trim().to_string());
        }
        Ok(())
    }

    fn take(&mut self, key: &str) -> Option<String> {
        if let Some(flag) = self.consumed.get_mut(key) {
            *flag = true;
        }
        self.entries.get(key).cloned()
    }

    /// Typed getter: absent keys return None, malformed values are errors.
    pub fn get<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|_| {
                Error::Config(format!(
                    "key `{key}`: cannot parse `{v}` as {}",
                    std::any::type_name::<T>()
                ))
            }),
        }
    }

    pub fn get_bool(&mut self, key: &str) -> Result<Option<bool>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => match v.as_str() {
                "true" => Ok(Some(true)),
                "false" => Ok(Some(false)),
                _ => Err(Error::Config(format!("key `{key}`: expected true or false, got `{v}`"))),
            },
        }
    }

    /// Comma-separated float list, e.g. `robust.sigmas = 0, 0.05, 0.1`.
    pub fn get_f64_list(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|_| {
                        Error::Config(format!("key `{key}`: `{}` is not a number", s.trim()))
                    })
                })
                .collect::<Result<Vec<f64>>>()
                .map(Some),
        }
    }

    /// Keys never consumed by any getter — must be empty after assembly.
    pub fn unknown_keys(&self) -> Vec<String> {
        self.consumed
            .iter()
            .filter(|(_, used)| !**used)
            .map(|(k, _)| k.clone())
            .collect()
    }
}

macro_rules! set_if {
    ($map:expr, $key:expr, $slot:expr) => {
        if let Some(v) = $map.get($key)? {
            $slot = v;
        }
    };
}

macro_rules! set_bool_if {
    ($map:expr, $key:expr, $slot:expr) => {
        if let Some(v) = $map.get_bool($key)? {
            $slot = v;
        }
    };
}

/// Builds the run configuration from an optional file plus overrides.
/// `seed_flag` (the `--seed` flag) wins over the file's `seed` key and
/// propagates into the train and synth sections.
pub fn build_run_config(
    file_text: Option<&str>,
    overrides: &[String],
    seed_flag: Option<u64>,
) -> Result<RunConfig> {
    let mut map = ConfigMap::parse(file_text.unwrap_or(""))?;
    map.apply_overrides(overrides)?;
    let mut cfg = RunConfig::default();

    set_if!(map, "seed", cfg.seed);
    if let Some(seed) = seed_flag {
        cfg.seed = seed;
    }
    cfg.train.seed = cfg.seed;
    cfg.synth.seed = cfg.seed;

    set_if!(map, "model.input_size", cfg.model.input_size);
    set_if!(map, "model.patch_size", cfg.model.patch_size);
    set_if!(map, "model.D", cfg.model.embed_dim);
    set_if!(map, "model.L", cfg.model.blocks);
    set_if!(map, "model.classes", cfg.model.classes);
    set_if!(map, "model.ffn_ratio", cfg.model.ffn_ratio);
    set_bool_if!(map, "model.overlap_stem", cfg.model.overlap_stem);

    set_if!(map, "knn.k", cfg.model.k);
    set_if!(map, "knn.lambda", cfg.model.lambda);
    set_bool_if!(map, "knn.dynamic", cfg.model.dynamic_knn);
    set_if!(map, "knn.dynamic_lambda", cfg.model.dynamic_lambda);

    set_bool_if!(map, "gaze.enabled", cfg.train.gaze);
    set_bool_if!(map, "gaze.raw_durations", cfg.train.raw_durations);

    set_if!(map, "train.epochs", cfg.train.epochs);
    set_if!(map, "train.batch_size", cfg.train.batch_size);
    set_if!(map, "train.lr", cfg.train.lr);
    set_if!(map, "train.weight_decay", cfg.train.weight_decay);
    set_bool_if!(map, "train.augment", cfg.train.augment);
    set_if!(map, "train.test_frac", cfg.train.test_frac);
    set_if!(map, "train.val_frac", cfg.train.val_frac);
    if let Some(v) = map.get::<String>("train.select")? {
        cfg.train.select = match v.as_str() {
            "test" => SelectOn::Test,
            "val" => SelectOn::Val,
            _ => {
                return Err(Error::Config(format!(
                    "key `train.select`: expected test or val, got `{v}`"
                )))
            }
        };
    }

    set_if!(map, "synth.n", cfg.synth.n_samples);
    set_if!(map, "synth.side", cfg.synth.side);
    set_if!(map, "synth.classes", cfg.synth.classes);

    if let Some(v) = map.get_f64_list("robust.sigmas")? {
        cfg.robust.sigmas = v;
    }
    set_if!(map, "robust.reps", cfg.robust.reps);
    set_if!(map, "robust.noise_seed", cfg.robust.noise_seed);

    set_if!(map, "bench.image_size", cfg.bench.image_size);
    set_if!(map, "bench.fixations", cfg.bench.fixations);
    set_if!(map, "bench.sigma", cfg.bench.sigma);
    set_if!(map, "bench.reps", cfg.bench.reps);
    set_if!(map, "bench.threshold", cfg.bench.threshold);

    let unknown = map.unknown_keys();
    if !unknown.is_empty() {
        return Err(Error::Config(format!("unknown config keys: {}", unknown.join(", "))));
    }
    if cfg.synth.classes != cfg.model.classes {
        return Err(Error::Config(format!(
            "synth.classes ({}) and model.classes ({}) must agree",
            cfg.synth.classes, cfg.model.classes
        )));
    }
    cfg.model.validate()?;
    cfg.train.validate()?;
    Ok(cfg)
}

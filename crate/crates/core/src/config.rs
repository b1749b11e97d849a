//! Experiment configuration: a flat TOML key/value file plus `key=value`
//! overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{FillMode, Generator, JitterGenerator, OracleGenerator, ShiftedGenerator};
use crate::error::{Error, Result};
use crate::learner::{HyperParams, LocalObjective};
use crate::sampling::{DistanceMetric, SelectionStrategy};
use crate::taskgen::{LabeledSample, TaskSpec};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    Fedavg,
    Fedprox,
    Fedrs,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    #[default]
    Oracle,
    Jitter,
    Shifted,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// `lr_global / K * sum(theta_k)`
    #[default]
    Uniform,
    /// `lr_global * sum(|D_k| / sum|D| * theta_k)`
    SizeWeighted,
}

/// Either one value added to every coordinate or a full bias vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ShiftBias {
    Uniform(f64),
    Vector(Vec<f64>),
}

impl ShiftBias {
    pub fn to_vector(&self, dim: usize) -> Vec<f64> {
        match self {
            ShiftBias::Uniform(b) => vec![*b; dim],
            ShiftBias::Vector(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,

    // federation
    pub n: usize,
    pub k: usize,
    pub g: usize,
    pub l: usize,
    pub alpha_dir: f64,
    pub aggregation: Aggregation,

    // plugin
    pub plugin: bool,
    pub augment_every_round: bool,
    pub fill: FillMode,
    pub select: SelectionStrategy,
    pub distance: DistanceMetric,
    pub generator: GeneratorKind,
    pub jitter_bandwidth: f64,
    pub shift_bias: ShiftBias,

    // local objective and optimizer
    pub algorithm: Algorithm,
    pub mu: f64,
    pub alpha_rs: f64,
    pub lr_local: f64,
    pub lr_global: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,

    // synthetic task
    pub classes: usize,
    pub dim: usize,
    pub class_sep: f64,
    pub mean_jitter: f64,
    pub class_scale: f64,
    pub train_size: usize,
    pub test_size: usize,
    /// Per-class training label weights; empty means uniform.
    pub train_marginal: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let hp = HyperParams::default();
        Self {
            seed: 1,
            n: 100,
            k: 10,
            g: 30,
            l: 5,
            alpha_dir: 0.1,
            aggregation: Aggregation::Uniform,
            plugin: true,
            augment_every_round: false,
            fill: FillMode::Random,
            select: SelectionStrategy::Balanced,
            distance: DistanceMetric::L2,
            generator: GeneratorKind::Oracle,
            jitter_bandwidth: 0.5,
            shift_bias: ShiftBias::Uniform(6.0),
            algorithm: Algorithm::Fedavg,
            mu: 0.01,
            alpha_rs: 0.5,
            lr_local: hp.lr_local,
            lr_global: hp.lr_global,
            beta1: hp.beta1,
            beta2: hp.beta2,
            eps: hp.eps,
            weight_decay: hp.weight_decay,
            batch_size: hp.batch_size,
            classes: 8,
            dim: 16,
            class_sep: 2.0,
            mean_jitter: 0.2,
            class_scale: 1.0,
            train_size: 10_000,
            test_size: 2_000,
            train_marginal: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("n", "need at least one device"));
        }
        if self.k == 0 {
            return Err(Error::config("k", "must be at least 1"));
        }
        if self.k > self.n {
            return Err(Error::config("k", "k exceeds n"));
        }
        if self.g == 0 {
            return Err(Error::config("g", "need at least one global epoch"));
        }
        if self.l == 0 {
            return Err(Error::config("l", "need at least one local epoch"));
        }
        if !(self.alpha_dir.is_finite() && self.alpha_dir > 0.0) {
            return Err(Error::config("alpha_dir", "must be positive and finite"));
        }
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(Error::config("mu", "must be non-negative and finite"));
        }
        if !(0.0..=1.0).contains(&self.alpha_rs) {
            return Err(Error::config("alpha_rs", "must lie in [0, 1]"));
        }
        if !(self.jitter_bandwidth.is_finite() && self.jitter_bandwidth >= 0.0) {
            return Err(Error::config("jitter_bandwidth", "must be non-negative and finite"));
        }
        if let ShiftBias::Vector(v) = &self.shift_bias {
            if v.len() != self.dim {
                return Err(Error::config(
                    "shift_bias",
                    format!("expected {} entries, got {}", self.dim, v.len()),
                ));
            }
        }
        if self.shift_bias.to_vector(self.dim).iter().any(|b| !b.is_finite()) {
            return Err(Error::config("shift_bias", "entries must be finite"));
        }
        if self.test_size == 0 {
            return Err(Error::config("test_size", "need at least one test sample"));
        }
        if self.n > self.train_size {
            return Err(Error::config("n", "n exceeds train_size"));
        }
        self.hyper_params().validate()?;
        self.task_spec()?;
        Ok(())
    }

    pub fn task_spec(&self) -> Result<TaskSpec> {
        let mut spec = TaskSpec::with_layout(
            self.classes,
            self.dim,
            self.class_sep,
            self.mean_jitter,
            self.class_scale,
            self.train_size,
            self.test_size,
            self.seed,
        )?;
        if !self.train_marginal.is_empty() {
            spec.train_marginal = Some(self.train_marginal.clone());
            spec.validate()?;
        }
        Ok(spec)
    }

    pub fn hyper_params(&self) -> HyperParams {
        HyperParams {
            lr_local: self.lr_local,
            lr_global: self.lr_global,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
        }
    }

    pub fn build_generator(&self, task: &TaskSpec) -> Result<Box<dyn Generator>> {
        Ok(match self.generator {
            GeneratorKind::Oracle => Box::new(OracleGenerator::new(task.clone())),
            GeneratorKind::Jitter => Box::new(JitterGenerator::new(self.jitter_bandwidth)?),
            GeneratorKind::Shifted => Box::new(ShiftedGenerator::new(
                task.clone(),
                self.shift_bias.to_vector(task.dim),
            )?),
        })
    }

    /// Local objective for a device training on `data`.
    pub fn objective_for(&self, data: &[LabeledSample]) -> LocalObjective {
        match self.algorithm {
            Algorithm::Fedavg => LocalObjective::FedAvg,
            Algorithm::Fedprox => LocalObjective::FedProx { mu: self.mu },
            Algorithm::Fedrs => LocalObjective::fedrs_for(self.alpha_rs, data, self.classes),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Short stable digest of the canonical serialization.
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        hex::encode(&digest[..8])
    }

    /// Applies `key = value` overrides; values use TOML syntax, bare words
    /// are taken as strings and `on`/`off` as booleans.
    pub fn with_overrides<'a, I>(&self, overrides: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        self.with_values(
            overrides
                .into_iter()
                .map(|(k, v)| (k.trim().to_string(), parse_value(v))),
        )
    }

    /// Applies already-typed overrides.
    pub fn with_values<I>(&self, overrides: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, toml::Value)>,
    {
        let mut table: toml::Table = toml::from_str(&self.to_toml()).expect("config round-trips");
        for (key, value) in overrides {
            if !table.contains_key(&key) {
                return Err(Error::UnknownKey(key));
            }
            table.insert(key, value);
        }
        from_table(table)
    }

    pub fn is_known_key(key: &str) -> bool {
        let known: toml::Table = toml::from_str(&ExperimentConfig::default().to_toml()).expect("defaults serialize");
        known.contains_key(key)
    }
}

pub fn parse_value(raw: &str) -> toml::Value {
    let raw = raw.trim();
    match raw {
        "on" => return toml::Value::Boolean(true),
        "off" => return toml::Value::Boolean(false),
        _ => {}
    }
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Splits `key=value`.
pub fn parse_override(item: &str) -> Result<(&str, &str)> {
    item.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| Error::config(item, "override must look like key=value"))
}

fn from_table(table: toml::Table) -> Result<ExperimentConfig> {
    for key in table.keys() {
        if !ExperimentConfig::is_known_key(key) {
            return Err(Error::UnknownKey(key.clone()));
        }
    }
    // Deserialize one key at a time so a bad value names its key.
    for (key, value) in &table {
        let mut single = toml::Table::new();
        single.insert(key.clone(), value.clone());
        if let Err(e) = toml::Value::Table(single).try_into::<ExperimentConfig>() {
            return Err(Error::config(key.clone(), e.message().trim().to_string()));
        }
    }
    let cfg: ExperimentConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::config("config", e.message().trim().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config_str(text: &str, origin: &Path) -> Result<ExperimentConfig> {
    let table: toml::Table = toml::from_str(text).map_err(|e| Error::Syntax {
        path: origin.to_path_buf(),
        message: e.to_string().trim().to_string(),
    })?;
    if let Some((key, _)) = table.iter().find(|(_, v)| v.is_table()) {
        return Err(Error::Syntax {
            path: origin.to_path_buf(),
            message: format!("sections are not supported (found [{key}])"),
        });
    }
    from_table(table)
}

/// Reads, validates and fills defaults for a config file.
pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text, path)
}

//! Run configuration: TOML file, then `EMLREG_SEED`, then command-line flags.
//!
//! Keys mirror the library's config structs:
//!
//! ```toml
//! losses = ["LS", "EML"]
//! bandwidth_v = 0.2
//! v_values = [0.2, 0.3, 0.4]
//! hidden = [256, 256, 256]
//!
//! [scenario]          # ScenarioConfig
//! p = 5
//! d = 100
//! error = "t2"
//!
//! [train]             # TrainConfig
//! min_epochs = 1000
//!
//! [fine_tune]         # TrainConfig, learning rate 3e-5 unless set
//! dropout_rate = 0.0
//!
//! [split]
//! train_fraction = 0.8
//! repeats = 50
//!
//! [data]
//! path = "boston.csv"
//! response = "medv"
//! standardize_response = false
//! ```
//!
//! Unknown keys are rejected. A partial section only overrides the keys it
//! names; everything else keeps its default.

use std::path::{Path, PathBuf};

use emlreg::kde::BandwidthRule;
use emlreg::losses::LossKind;
use emlreg::neuralnet::{MlpConfig, DEFAULT_HIDDEN};
use emlreg::simbench::ScenarioConfig;
use emlreg::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const SEED_ENV: &str = "EMLREG_SEED";

/// Random train/test splitting for the real-data pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            repeats: 50,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(CliError::usage(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if self.repeats == 0 {
            return Err(CliError::usage("repeats must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    pub response: Option<String>,
    pub standardize_response: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub losses: Vec<String>,
    /// Neighbourhood proportion of the EML bandwidth rule.
    pub bandwidth_v: f64,
    /// Proportions visited by `sweep-bandwidth`.
    pub v_values: Vec<f64>,
    pub hidden: Vec<usize>,
    pub scenario: ScenarioConfig,
    pub train: TrainConfig,
    pub fine_tune: TrainConfig,
    pub split: SplitSpec,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            losses: LossKind::NAMES.iter().map(|s| s.to_string()).collect(),
            bandwidth_v: 0.2,
            v_values: (2..=8).map(|k| k as f64 / 10.0).collect(),
            hidden: DEFAULT_HIDDEN.to_vec(),
            scenario: ScenarioConfig::default(),
            train: TrainConfig::default(),
            fine_tune: TrainConfig::fine_tune(),
            split: SplitSpec::default(),
            data: DataConfig::default(),
        }
    }
}

/// Values given on the command line; `None` leaves the config untouched.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub losses: Option<Vec<String>>,
    pub seed: Option<u64>,
    pub v: Option<Vec<f64>>,
    pub response: Option<String>,
    pub repeats: Option<usize>,
    pub epochs: Option<usize>,
    pub data: Option<PathBuf>,
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_table() && v.is_table() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Value = toml::from_str(text).map_err(|e| CliError::usage(format!("config: {e}")))?;
        let mut merged = toml::Value::try_from(RunConfig::default()).expect("default config serializes");
        merge(&mut merged, user);
        merged.try_into().map_err(|e| CliError::usage(format!("config: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::file(path))?;
        Self::from_toml_str(&text)
    }

    /// Set every seed in the config: scenario, split and both trainers.
    pub fn set_seed(&mut self, seed: u64) {
        self.scenario.master_seed = seed;
        self.split.seed = seed;
        self.train.seed = seed;
        self.fine_tune.seed = seed;
    }

    /// Apply `EMLREG_SEED` (when `env_seed` is set) and then the flags.
    /// `sweep` selects whether `--v` fills `v_values` or `bandwidth_v`.
    pub fn apply(&mut self, env_seed: Option<&str>, o: &Overrides, sweep: bool) -> Result<()> {
        if let Some(s) = env_seed {
            let seed = s
                .trim()
                .parse()
                .map_err(|_| CliError::usage(format!("{SEED_ENV} must be an unsigned integer, got `{s}`")))?;
            self.set_seed(seed);
        }
        if let Some(seed) = o.seed {
            self.set_seed(seed);
        }
        if let Some(losses) = &o.losses {
            self.losses = losses.clone();
        }
        if let Some(v) = &o.v {
            if sweep {
                self.v_values = v.clone();
            } else if let [single] = v.as_slice() {
                self.bandwidth_v = *single;
            } else {
                return Err(CliError::usage("--v takes a single value for this command"));
            }
        }
        if let Some(r) = &o.response {
            self.data.response = Some(r.clone());
        }
        if let Some(r) = o.repeats {
            self.split.repeats = r;
        }
        if let Some(e) = o.epochs {
            self.train = self.train.clone().with_epochs(e);
            self.fine_tune = self.fine_tune.clone().with_epochs(e);
        }
        if let Some(p) = &o.data {
            self.data.path = Some(p.clone());
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.losses.is_empty() {
            return Err(CliError::usage("at least one loss is required"));
        }
        self.loss_kinds()?;
        check_v(self.bandwidth_v)?;
        if self.v_values.is_empty() {
            return Err(CliError::usage("v_values must not be empty"));
        }
        for &v in &self.v_values {
            check_v(v)?;
        }
        if self.hidden.contains(&0) {
            return Err(CliError::usage("hidden widths must be positive"));
        }
        let usage = |e: emlreg::Error| CliError::usage(e.to_string());
        self.scenario.validate().map_err(usage)?;
        self.train.validate().map_err(usage)?;
        self.fine_tune.validate().map_err(usage)?;
        self.split.validate()
    }

    /// The configured losses, EML using the k-nearest-neighbour rule at `bandwidth_v`.
    pub fn loss_kinds(&self) -> Result<Vec<LossKind>> {
        self.losses.iter().map(|name| parse_loss(name, self.bandwidth_v)).collect()
    }

    /// `(d, hidden..., 1)` with the training dropout rate.
    pub fn network(&self, d: usize) -> Result<MlpConfig> {
        let mut widths = Vec::with_capacity(self.hidden.len() + 2);
        widths.push(d);
        widths.extend(&self.hidden);
        widths.push(1);
        Ok(MlpConfig::new(widths, self.train.dropout_rate)?)
    }
}

pub fn check_v(v: f64) -> Result<()> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(CliError::usage(format!("bandwidth proportion v must lie in (0, 1], got {v}")))
    }
}

/// Loss by name; unknown names are usage errors listing the valid ones.
pub fn parse_loss(name: &str, v: f64) -> Result<LossKind> {
    let kind: LossKind = name.parse().map_err(|e: emlreg::Error| CliError::usage(e.to_string()))?;
    Ok(if kind.is_eml() { LossKind::eml(BandwidthRule::knn(v)) } else { kind })
}

//! TOML run configuration.
//!
//! A config may name a `preset`; its keys are merged under the user's keys
//! (tables merge recursively, scalars and arrays from the user win).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{LearnerSpec, Method};
use crate::rational::Rational;
use crate::schedule::PublishOrder;
use crate::stream::StreamSpec;

use super::presets;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    #[default]
    Realtime,
    Slowstream,
}

/// Where the stream-model relative complexity comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComplexitySource {
    /// FLOPs ratio against ER on a 100-step probe.
    #[default]
    Measured,
    /// Tabulated values (one or two GD steps per job).
    Table,
    Fixed(Rational),
}

/// Axis values for `sweep`; empty lists fall back to built-in grids.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub lr: Vec<f64>,
    pub memory: Vec<usize>,
    pub speed: Vec<Rational>,
    pub gd_steps: Vec<Rational>,
    /// Methods to sweep; defaults to the configured learner's method.
    pub methods: Vec<Method>,
    /// Run learning-rate sweeps on this leading fraction of the stream.
    pub prefix_fraction: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub stream: StreamSpec,
    pub learner: LearnerSpec,
    /// Hidden layer widths of the classifier.
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub mode: RunMode,
    #[serde(default)]
    pub complexity: ComplexitySource,
    #[serde(default = "one")]
    pub stream_speed_multiplier: Rational,
    pub buffer_capacity: usize,
    #[serde(default)]
    pub holdout_fraction: f64,
    #[serde(default = "default_snapshots")]
    pub snapshot_fractions: Vec<Rational>,
    #[serde(default)]
    pub seed: u64,
    /// Number of consecutive seeds (from `seed`) used by compare and sweep.
    #[serde(default = "default_repeats")]
    pub repeats: u64,
    /// Learning rate for learners without an explicit `lr`, including the
    /// baselines of compare and the methods of sweep. Unset means the
    /// per-method library default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_lr: Option<f64>,
    #[serde(default)]
    pub publish: PublishOrder,
    #[serde(default)]
    pub sweep: SweepConfig,
}

fn one() -> Rational {
    Rational::ONE
}

fn default_repeats() -> u64 {
    1
}

fn default_snapshots() -> Vec<Rational> {
    vec![
        Rational::new(1, 3).expect("valid"),
        Rational::new(2, 3).expect("valid"),
    ]
}

/// Recursively merges `overlay` into `base`.
pub fn merge_tables(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

impl RunConfig {
    /// Parses config text, applying any named preset and per-method default
    /// learning rates.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut user: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut table = match user.remove("preset") {
            None => toml::Table::new(),
            Some(toml::Value::String(name)) => presets::preset_table(&name).ok_or_else(|| {
                let known: Vec<_> = presets::names().map(|(n, _)| n).collect();
                Error::Config(format!(
                    "unknown preset {name:?} (known: {})",
                    known.join(", ")
                ))
            })?,
            Some(other) => {
                return Err(Error::Config(format!(
                    "preset must be a string, got {other}"
                )))
            }
        };
        merge_tables(&mut table, user);
        fill_default_lr(&mut table)?;
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.stream.validate()?;
        self.learner.validate()?;
        if self.buffer_capacity == 0 {
            return Err(Error::Config("buffer_capacity must be >= 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be >= 1".into()));
        }
        if self.stream_speed_multiplier.is_zero() {
            return Err(Error::Config(
                "stream_speed_multiplier must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::Config(format!(
                "holdout_fraction {} outside [0, 1)",
                self.holdout_fraction
            )));
        }
        if self
            .snapshot_fractions
            .iter()
            .any(|f| f.is_zero() || *f > Rational::ONE)
        {
            return Err(Error::Config(
                "snapshot_fractions must lie in (0, 1]".into(),
            ));
        }
        if self
            .default_lr
            .is_some_and(|lr| !(lr > 0.0 && lr.is_finite()))
        {
            return Err(Error::Config("default_lr must be positive".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be >= 1".into()));
        }
        if let ComplexitySource::Fixed(k) = self.complexity {
            if k.is_zero() {
                return Err(Error::Config("fixed complexity must be positive".into()));
            }
        }
        Ok(())
    }

    /// Learner spec for `method` at this config's default learning rate.
    pub fn default_learner(&self, method: Method) -> LearnerSpec {
        let mut spec = LearnerSpec::with_default_lr(method);
        if let Some(lr) = self.default_lr {
            spec.lr = lr;
        }
        spec
    }

    /// `[d, hidden..., C]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.stream.feature_dim];
        dims.extend(&self.hidden);
        dims.push(self.stream.classes);
        dims
    }

    /// Stream spec seeded from the run seed.
    pub fn seeded_stream(&self) -> StreamSpec {
        StreamSpec {
            seed: self.seed,
            ..self.stream.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        RunConfig {
            seed,
            ..self.clone()
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.repeats).map(|i| self.seed + i).collect()
    }

    /// Writes the fully resolved config (no preset indirection).
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?).map_err(|e| Error::io(path, e))
    }
}

/// Inserts the method's default learning rate when `learner.lr` is absent,
/// so presets can be combined with any method.
fn fill_default_lr(table: &mut toml::Table) -> Result<()> {
    let Some(toml::Value::Table(learner)) = table.get("learner") else {
        return Ok(());
    };
    if learner.contains_key("lr") {
        return Ok(());
    }
    let Some(toml::Value::String(method)) = learner.get("method") else {
        return Ok(());
    };
    let method: Method = method.parse()?;
    let lr = match table.get("default_lr") {
        Some(v) => v
            .as_float()
            .or_else(|| v.as_integer().map(|i| i as f64))
            .ok_or_else(|| Error::Config(format!("default_lr must be a number, got {v}")))?,
        None => LearnerSpec::with_default_lr(method).lr,
    };
    if let Some(toml::Value::Table(learner)) = table.get_mut("learner") {
        learner.insert("lr".into(), toml::Value::Float(lr));
    }
    Ok(())
}

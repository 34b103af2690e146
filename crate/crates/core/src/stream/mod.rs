//! Fixed-rate labeled streams: seeded synthetic drift, file-backed tables,
//! the held-out split and the hyperparameter-selection prefix.

mod file;
mod synthetic;

use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

pub use file::{read_table, write_binary, write_csv, TableRow, TableStream};
pub use synthetic::SyntheticStream;

/// Samples revealed by the stream at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledBatch {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub step: u64,
}

impl LabeledBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Builds a batch from per-sample rows; `None` when `rows` is empty.
    pub fn from_samples(
        rows: impl IntoIterator<Item = (Vec<f64>, usize)>,
        step: u64,
    ) -> Option<Self> {
        let (features, labels): (Vec<Vec<f64>>, Vec<usize>) = rows.into_iter().unzip();
        if features.is_empty() {
            return None;
        }
        Some(LabeledBatch {
            features: Tensor::from_rows(&features).ok()?,
            labels,
            step,
        })
    }

    /// Row-wise concatenation (stream half first).
    pub fn concat(&self, other: &LabeledBatch) -> Result<LabeledBatch> {
        if self.features.cols() != other.features.cols() {
            return Err(Error::Shape(
                "cannot concatenate batches of different width".into(),
            ));
        }
        let mut data = self.features.data().to_vec();
        data.extend_from_slice(other.features.data());
        let rows = self.len() + other.len();
        Ok(LabeledBatch {
            features: Tensor::new(vec![rows, self.features.cols()], data)?,
            labels: self.labels.iter().chain(&other.labels).copied().collect(),
            step: self.step,
        })
    }

    pub fn sample(&self, i: usize) -> (&[f64], usize) {
        (self.features.row(i), self.labels[i])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriftMode {
    /// Every class prototype takes a Gaussian random-walk step each stream step.
    PrototypeWalk,
    /// Labels come from a sliding window of active classes; prototypes also walk.
    PhasedClasses,
    /// Fixed prototypes, all classes active.
    Stationary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSchedule {
    pub mode: DriftMode,
    #[serde(default)]
    pub sigma_drift: f64,
    #[serde(default)]
    pub sigma_noise: f64,
    /// Size of the active-class window (phased-classes only).
    #[serde(default = "default_active")]
    pub active_classes: usize,
    /// Steps before the window slides by one class (phased-classes only).
    #[serde(default = "default_phase")]
    pub phase_length: u64,
}

fn default_active() -> usize {
    1
}

fn default_phase() -> u64 {
    1
}

impl DriftSchedule {
    pub fn stationary(sigma_noise: f64) -> Self {
        DriftSchedule {
            mode: DriftMode::Stationary,
            sigma_drift: 0.0,
            sigma_noise,
            active_classes: 1,
            phase_length: 1,
        }
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        if !(self.sigma_drift >= 0.0 && self.sigma_noise >= 0.0) {
            return Err(Error::Config("drift/noise sigmas must be >= 0".into()));
        }
        if self.mode == DriftMode::PhasedClasses
            && (self.active_classes == 0 || self.active_classes > classes || self.phase_length == 0)
        {
            return Err(Error::Config(format!(
                "phased-classes needs 1 <= active_classes <= {classes} and phase_length >= 1"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StreamSource {
    Synthetic(DriftSchedule),
    File(PathBuf),
}

/// Full description of a stream; building it twice yields identical batches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSpec {
    pub source: StreamSource,
    pub steps: u64,
    pub batch_size: usize,
    pub feature_dim: usize,
    pub classes: usize,
    /// Overwritten by the run seed when driven from a harness config.
    #[serde(default)]
    pub seed: u64,
}

impl StreamSpec {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 || self.feature_dim == 0 || self.classes == 0 {
            return Err(Error::Config(
                "stream steps, batch_size, feature_dim and classes must be >= 1".into(),
            ));
        }
        if let StreamSource::Synthetic(drift) = &self.source {
            drift.validate(self.classes)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeldOutSample {
    pub features: Vec<f64>,
    pub label: usize,
    pub step: u64,
}

/// Samples withheld from training, tagged with the step that revealed them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HeldOutSet {
    pub samples: Vec<HeldOutSample>,
}

impl HeldOutSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples whose timestamp satisfies `keep`, packed as a batch.
    pub fn select(&self, keep: impl Fn(u64) -> bool) -> Option<LabeledBatch> {
        LabeledBatch::from_samples(
            self.samples
                .iter()
                .filter(|s| keep(s.step))
                .map(|s| (s.features.clone(), s.label)),
            0,
        )
    }
}

/// Per-slot holdout decisions, drawn from their own RNG so the underlying
/// stream is untouched when no slot is selected.
#[derive(Clone, Debug)]
pub(crate) struct HoldoutDraw {
    fraction: f64,
    select_rng: ChaCha8Rng,
    repack_rng: ChaCha8Rng,
}

impl HoldoutDraw {
    fn new(fraction: f64, seed: u64) -> Self {
        HoldoutDraw {
            fraction,
            select_rng: ChaCha8Rng::seed_from_u64(seed),
            repack_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f4e_9ac4),
        }
    }

    fn held_slots(&mut self, n: usize) -> Vec<bool> {
        (0..n)
            .map(|_| self.select_rng.random::<f64>() < self.fraction)
            .collect()
    }
}

#[derive(Clone, Debug)]
enum Source {
    Synthetic(Box<SyntheticStream>),
    Table(TableStream),
}

/// Single-consumer iterator over the batches of one stream.
#[derive(Clone, Debug)]
pub struct StreamHandle {
    source: Source,
    holdout: Option<HoldoutDraw>,
    /// Held samples removed so far (only populated while splitting).
    held: Vec<HeldOutSample>,
    last_step: u64,
    feature_dim: usize,
    classes: usize,
}

impl StreamHandle {
    /// Upper bound on the step index this handle will yield.
    pub fn last_step(&self) -> u64 {
        self.last_step
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    fn with_holdout(mut self, draw: HoldoutDraw) -> Self {
        self.holdout = Some(draw);
        self
    }

    fn truncated(mut self, last_step: u64) -> Self {
        self.last_step = self.last_step.min(last_step);
        self
    }

    fn next_raw(&mut self) -> Option<LabeledBatch> {
        match &mut self.source {
            Source::Synthetic(s) => s.next_batch(),
            Source::Table(t) => t.next(),
        }
    }
}

impl Iterator for StreamHandle {
    type Item = LabeledBatch;

    fn next(&mut self) -> Option<LabeledBatch> {
        loop {
            let batch = self.next_raw()?;
            if batch.step > self.last_step {
                return None;
            }
            let Some(draw) = self.holdout.as_mut() else {
                return Some(batch);
            };
            let slots = draw.held_slots(batch.len());
            if !slots.iter().any(|&h| h) {
                return Some(batch);
            }
            let step = batch.step;
            let mut kept = Vec::with_capacity(batch.len());
            for (i, &held) in slots.iter().enumerate() {
                let (x, y) = batch.sample(i);
                if held {
                    self.held.push(HeldOutSample {
                        features: x.to_vec(),
                        label: y,
                        step,
                    });
                    // Synthetic streams keep a constant rate by redrawing the
                    // slot from the same step's distribution.
                    if let Source::Synthetic(s) = &self.source {
                        kept.push(s.draw_sample(&mut draw.repack_rng));
                    }
                } else {
                    kept.push((x.to_vec(), y));
                }
            }
            match LabeledBatch::from_samples(kept, step) {
                Some(b) => return Some(b),
                None => continue,
            }
        }
    }
}

/// Builds the deterministic stream described by `spec`.
pub fn build_stream(spec: &StreamSpec) -> Result<StreamHandle> {
    spec.validate()?;
    let source = match &spec.source {
        StreamSource::Synthetic(drift) => Source::Synthetic(Box::new(SyntheticStream::new(
            drift.clone(),
            spec.feature_dim,
            spec.classes,
            spec.batch_size,
            spec.seed,
        ))),
        StreamSource::File(path) => {
            let table = Arc::new(read_table(path)?);
            if table.feature_dim != spec.feature_dim || table.classes != spec.classes {
                return Err(Error::StreamFormat {
                    path: path.clone(),
                    reason: format!(
                        "file has d={} C={}, config expects d={} C={}",
                        table.feature_dim, table.classes, spec.feature_dim, spec.classes
                    ),
                });
            }
            Source::Table(TableStream::new(table))
        }
    };
    Ok(StreamHandle {
        source,
        holdout: None,
        held: Vec::new(),
        last_step: spec.steps,
        feature_dim: spec.feature_dim,
        classes: spec.classes,
    })
}

/// Removes a uniformly chosen `fraction` of sample slots from the training
/// stream into a timestamped held-out set.
pub fn holdout_split(
    spec: &StreamSpec,
    fraction: f64,
    seed: u64,
) -> Result<(StreamHandle, HeldOutSet)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "holdout fraction {fraction} outside (0, 1)"
        )));
    }
    let train = build_stream(spec)?.with_holdout(HoldoutDraw::new(fraction, seed));
    let mut scan = train.clone();
    for _ in scan.by_ref() {}
    Ok((
        train,
        HeldOutSet {
            samples: std::mem::take(&mut scan.held),
        },
    ))
}

/// The first `floor(fraction * T)` steps as an independent stream.
pub fn hyperparam_prefix(spec: &StreamSpec, fraction: f64) -> Result<StreamHandle> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "prefix fraction {fraction} outside (0, 1]"
        )));
    }
    let steps = prefix_steps(spec.steps, fraction);
    if steps < 1 {
        return Err(Error::InvalidArgument(format!(
            "prefix of {fraction} x {} steps is empty",
            spec.steps
        )));
    }
    Ok(build_stream(spec)?.truncated(steps))
}

pub(crate) fn prefix_steps(steps: u64, fraction: f64) -> u64 {
    // Round-trip guard so 0.05 * 100 floors to 5 rather than 4.
    (fraction * steps as f64 + 1e-9).floor() as u64
}

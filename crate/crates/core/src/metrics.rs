//! Average online accuracy (prequential) and held-out transfer metrics.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, MlpParams};
use crate::stream::HeldOutSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: u64,
    pub n: usize,
    pub correct: usize,
    pub batch_acc: f64,
    pub cum_acc: f64,
    pub version: u64,
    pub trained: bool,
}

#[derive(Clone, Debug, Default)]
pub struct MetricsLog {
    records: Vec<StepRecord>,
    total_correct: u64,
    total_seen: u64,
    snapshots: Vec<(u64, MlpParams)>,
}

impl MetricsLog {
    /// Appends the evaluation of one batch. Must be called before any
    /// training on that batch.
    pub fn record_step(
        &mut self,
        t: u64,
        predictions: &[usize],
        labels: &[usize],
        version: u64,
        trained: bool,
    ) -> Result<()> {
        if predictions.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} predictions for {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        if self.records.last().is_some_and(|r| r.t >= t) {
            return Err(Error::InvalidArgument(format!(
                "step {t} is not increasing"
            )));
        }
        let n = labels.len();
        let correct = predictions
            .iter()
            .zip(labels)
            .filter(|(p, y)| p == y)
            .count();
        self.total_correct += correct as u64;
        self.total_seen += n as u64;
        self.records.push(StepRecord {
            t,
            n,
            correct,
            batch_acc: if n == 0 {
                0.0
            } else {
                correct as f64 / n as f64
            },
            cum_acc: self.total_correct as f64 / self.total_seen.max(1) as f64,
            version,
            trained,
        });
        Ok(())
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    /// Final average online accuracy; `None` for an empty run.
    pub fn average_online_accuracy(&self) -> Option<f64> {
        (self.total_seen > 0).then(|| self.total_correct as f64 / self.total_seen as f64)
    }

    pub fn trained_fraction(&self) -> Option<f64> {
        (!self.records.is_empty()).then(|| {
            self.records.iter().filter(|r| r.trained).count() as f64 / self.records.len() as f64
        })
    }

    pub fn snapshot(&mut self, t: u64, params: &MlpParams) {
        self.snapshots.push((t, params.clone()));
    }

    pub fn snapshots(&self) -> &[(u64, MlpParams)] {
        &self.snapshots
    }

    /// One JSON object per step.
    pub fn write_jsonl(&self, out: &mut impl Write) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut *out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(text: &str) -> Result<Vec<StepRecord>> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                serde_json::from_str(l)
                    .map_err(|e| Error::Config(format!("bad step record {l:?}: {e}")))
            })
            .collect()
    }
}

/// Snapshot steps `floor(f * steps)` for stream fractions such as `1/3, 2/3`.
pub fn snapshot_steps(steps: u64, fractions: &[crate::Rational]) -> Vec<u64> {
    fractions
        .iter()
        .map(|f| {
            let t = f.numer() as u128 * steps as u128 / f.denom() as u128;
            (t as u64).max(1)
        })
        .collect()
}

fn held_accuracy(
    params: &MlpParams,
    held: &HeldOutSet,
    keep: impl Fn(u64) -> bool,
    what: &str,
) -> Result<f64> {
    if held.is_empty() {
        return Err(Error::Empty("held-out set is empty".into()));
    }
    let batch = held
        .select(keep)
        .ok_or_else(|| Error::Empty(format!("no held-out samples {what}")))?;
    let preds = nn::predict(params, &batch.features)?;
    let correct = preds
        .iter()
        .zip(&batch.labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(correct as f64 / batch.len() as f64)
}

/// Accuracy of the final model on held-out samples revealed up to `end_step`.
pub fn backward_transfer(
    final_params: &MlpParams,
    held: &HeldOutSet,
    end_step: u64,
) -> Result<f64> {
    held_accuracy(final_params, held, |t| t <= end_step, "before the end step")
}

/// Accuracy of a snapshot on held-out samples revealed from `from_step` on.
pub fn forward_transfer(snapshot: &MlpParams, held: &HeldOutSet, from_step: u64) -> Result<f64> {
    held_accuracy(
        snapshot,
        held,
        |t| t >= from_step,
        "after the snapshot step",
    )
}

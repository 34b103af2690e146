//! Bounded replay memory.
//!
//! Update policies: FIFO (default), reservoir, and gradient-diversity (GSS)
//! scoring. Retrieval: uniform, or maximally-interfered (MIR) via a virtual
//! SGD step.

use std::collections::VecDeque;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, FlopsCounter, MlpParams, Tensor};
use crate::stream::{write_csv, LabeledBatch, TableRow};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdatePolicy {
    #[default]
    Fifo,
    Reservoir,
    /// Entries carry a diversity score; updates go through [`gss_update`].
    Gss,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryEntry {
    pub features: Vec<f64>,
    pub label: usize,
    pub step: u64,
    /// Diversity score in `[0, 2]`, only meaningful under [`UpdatePolicy::Gss`].
    pub score: f64,
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    policy: UpdatePolicy,
    entries: VecDeque<MemoryEntry>,
    seen_count: u64,
    feature_dim: Option<usize>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, policy: UpdatePolicy) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay buffer capacity must be >= 1".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            policy,
            entries: VecDeque::with_capacity(capacity),
            seen_count: 0,
            feature_dim: None,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn policy(&self) -> UpdatePolicy {
        self.policy
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    pub fn seen_count(&self) -> u64 {
        self.seen_count
    }

    /// Entries in storage order (oldest first under FIFO).
    pub fn entries(&self) -> impl Iterator<Item = &MemoryEntry> {
        self.entries.iter()
    }

    fn check_dim(&mut self, batch: &LabeledBatch) -> Result<()> {
        let d = batch.features.cols();
        match self.feature_dim {
            Some(expected) if expected != d => Err(Error::Shape(format!(
                "batch has {d} features, buffer holds {expected}"
            ))),
            _ => {
                self.feature_dim = Some(d);
                Ok(())
            }
        }
    }

    /// Offers every sample of `batch` to the buffer under its FIFO or
    /// reservoir policy.
    pub fn insert(&mut self, batch: &LabeledBatch, rng: &mut ChaCha8Rng) -> Result<()> {
        self.check_dim(batch)?;
        for i in 0..batch.len() {
            let (x, y) = batch.sample(i);
            let entry = MemoryEntry {
                features: x.to_vec(),
                label: y,
                step: batch.step,
                score: 1.0,
            };
            self.seen_count += 1;
            match self.policy {
                UpdatePolicy::Fifo => {
                    if self.is_full() {
                        self.entries.pop_front();
                    }
                    self.entries.push_back(entry);
                }
                UpdatePolicy::Reservoir => {
                    if !self.is_full() {
                        self.entries.push_back(entry);
                    } else {
                        let j = rng.random_range(0..self.seen_count);
                        if (j as usize) < self.capacity {
                            self.entries[j as usize] = entry;
                        }
                    }
                }
                UpdatePolicy::Gss => {
                    return Err(Error::InvalidArgument(
                        "GSS buffers are updated through gss_update".into(),
                    ))
                }
            }
        }
        Ok(())
    }

    fn batch_of(&self, idx: impl IntoIterator<Item = usize>) -> Option<LabeledBatch> {
        LabeledBatch::from_samples(
            idx.into_iter().map(|i| {
                let e = &self.entries[i];
                (e.features.clone(), e.label)
            }),
            0,
        )
    }

    fn uniform_indices(&self, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let len = self.entries.len();
        if len == 0 || count == 0 {
            Vec::new()
        } else if len >= count {
            index::sample(rng, len, count).into_vec()
        } else {
            (0..count).map(|_| rng.random_range(0..len)).collect()
        }
    }

    /// `count` entries drawn uniformly: without replacement when the buffer
    /// holds at least `count` entries, with replacement otherwise. `None`
    /// when the buffer is empty.
    pub fn retrieve_uniform(&self, count: usize, rng: &mut ChaCha8Rng) -> Option<LabeledBatch> {
        self.batch_of(self.uniform_indices(count, rng))
    }

    /// Writes the buffer contents in the stream CSV layout.
    pub fn dump_csv(&self, path: &Path, classes: usize) -> Result<()> {
        let rows: Vec<TableRow> = self
            .entries
            .iter()
            .map(|e| TableRow {
                step: e.step,
                label: e.label,
                features: e.features.clone(),
            })
            .collect();
        let mut sorted = rows;
        sorted.sort_by_key(|r| r.step);
        let steps = sorted.last().map_or(1, |r| r.step);
        write_csv(path, self.feature_dim.unwrap_or(0), classes, steps, &sorted)
    }
}

/// Flattened cross-entropy gradient of one sample (one forward + one backward).
fn sample_gradient(
    model: &MlpParams,
    features: &[f64],
    label: usize,
    meter: &mut FlopsCounter,
) -> Result<Vec<f64>> {
    let x = Tensor::new(vec![1, features.len()], features.to_vec())?;
    let (logits, cache) = nn::forward(model, &x, meter)?;
    let (_, dlogits) = nn::loss_ce(&logits, &[label], None)?;
    Ok(nn::backward(model, &cache, &dlogits, meter)?.to_flat())
}

/// Diversity score of `grad` against reference gradients: max cosine + 1.
pub fn gss_score(grad: &[f64], reference: &[Vec<f64>]) -> f64 {
    let unit_refs: Vec<Vec<f64>> = reference.iter().map(|r| unit(r)).collect();
    unit_score(&unit(grad), &unit_refs)
}

/// `v / |v|`, or the zero vector when `|v| = 0`.
fn unit(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        vec![0.0; v.len()]
    } else {
        v.iter().map(|x| x / norm).collect()
    }
}

fn unit_score(grad: &[f64], unit_refs: &[Vec<f64>]) -> f64 {
    let max_cos = unit_refs
        .iter()
        .map(|r| {
            grad.iter()
                .zip(r)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                .clamp(-1.0, 1.0)
        })
        .fold(None, |acc: Option<f64>, c| {
            Some(acc.map_or(c, |a| a.max(c)))
        })
        .unwrap_or(0.0);
    max_cos + 1.0
}

/// Greedy gradient-diversity buffer update.
///
/// Every incoming sample is scored against the gradients of
/// `subset_multiplier * n` uniformly drawn memory samples. While there is
/// room the sample is stored with its score; afterwards a victim is drawn
/// proportionally to stored scores and replaced when
/// `victim / (victim + score)` beats a uniform draw.
pub fn gss_update(
    buf: &mut ReplayBuffer,
    incoming: &LabeledBatch,
    model: &MlpParams,
    subset_multiplier: usize,
    rng: &mut ChaCha8Rng,
    meter: &mut FlopsCounter,
) -> Result<()> {
    buf.check_dim(incoming)?;
    let incoming_grads = (0..incoming.len())
        .map(|i| {
            let (x, y) = incoming.sample(i);
            sample_gradient(model, x, y, meter)
        })
        .collect::<Result<Vec<_>>>()?;
    let subset_idx = buf.uniform_indices(subset_multiplier * incoming.len(), rng);
    let subset_grads = subset_idx
        .iter()
        .map(|&i| {
            let e = &buf.entries[i];
            sample_gradient(model, &e.features, e.label, meter).map(|g| unit(&g))
        })
        .collect::<Result<Vec<_>>>()?;

    for (i, grad) in incoming_grads.iter().enumerate() {
        let (x, y) = incoming.sample(i);
        let score = unit_score(&unit(grad), &subset_grads);
        let entry = MemoryEntry {
            features: x.to_vec(),
            label: y,
            step: incoming.step,
            score,
        };
        buf.seen_count += 1;
        if !buf.is_full() {
            buf.entries.push_back(entry);
            continue;
        }
        let weights: Vec<f64> = buf.entries.iter().map(|e| e.score).collect();
        let victim = match WeightedIndex::new(&weights) {
            Ok(dist) => dist.sample(rng),
            Err(_) => rng.random_range(0..weights.len()),
        };
        let victim_score = weights[victim];
        let u: f64 = rng.random();
        if victim_score + score > 0.0 && victim_score / (victim_score + score) > u {
            buf.entries[victim] = entry;
        }
    }
    Ok(())
}

/// Candidate ranking shared by [`mir_retrieve`] and its tests: indices sorted by
/// descending score, ties kept in index order.
pub fn rank_by_interference(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

#[derive(Clone, Debug)]
pub struct MirSelection {
    pub batch: LabeledBatch,
    /// Interference score of every candidate, in draw order.
    pub candidate_scores: Vec<f64>,
    pub candidates: LabeledBatch,
}

/// Maximally-interfered retrieval: takes a virtual SGD step on `incoming`,
/// draws `candidate_count` memory samples and returns the `count` whose loss
/// increases most under the virtual parameters.
#[allow(clippy::too_many_arguments)]
pub fn mir_retrieve(
    buf: &ReplayBuffer,
    incoming: &LabeledBatch,
    model: &MlpParams,
    lr: f64,
    candidate_count: usize,
    count: usize,
    meter: &mut FlopsCounter,
    rng: &mut ChaCha8Rng,
) -> Result<Option<MirSelection>> {
    if candidate_count < count {
        return Err(Error::InvalidArgument(format!(
            "candidate_count {candidate_count} < count {count}"
        )));
    }
    if buf.is_empty() || count == 0 {
        return Ok(None);
    }
    let (logits, cache) = nn::forward(model, &incoming.features, meter)?;
    let (_, dlogits) = nn::loss_ce(&logits, &incoming.labels, None)?;
    let grads = nn::backward(model, &cache, &dlogits, meter)?;
    let virtual_model = nn::sgd_step(model, &grads, lr)?;

    let Some(candidates) = buf.retrieve_uniform(candidate_count, rng) else {
        return Ok(None);
    };
    let (before, _) = nn::forward(model, &candidates.features, meter)?;
    let (after, _) = nn::forward(&virtual_model, &candidates.features, meter)?;
    let loss_before = nn::per_sample_ce(&before, &candidates.labels)?;
    let loss_after = nn::per_sample_ce(&after, &candidates.labels)?;
    let scores: Vec<f64> = loss_after
        .iter()
        .zip(&loss_before)
        .map(|(a, b)| a - b)
        .collect();
    let chosen = rank_by_interference(&scores);
    let batch = LabeledBatch::from_samples(
        chosen[..count].iter().map(|&i| {
            let (x, y) = candidates.sample(i);
            (x.to_vec(), y)
        }),
        0,
    )
    .expect("count >= 1");
    Ok(Some(MirSelection {
        batch,
        candidate_scores: scores,
        candidates,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn item(v: f64, step: u64) -> LabeledBatch {
        LabeledBatch::from_samples([(vec![v, -v], (v as usize) % 3)], step).unwrap()
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn under_capacity_keeps_everything() {
        for policy in [UpdatePolicy::Fifo, UpdatePolicy::Reservoir] {
            let mut buf = ReplayBuffer::new(2, policy).unwrap();
            buf.insert(&item(1.0, 1), &mut rng(0)).unwrap();
            buf.insert(&item(2.0, 2), &mut rng(0)).unwrap();
            assert_eq!(buf.len(), 2);
        }
    }

    #[test]
    fn fifo_evicts_oldest() {
        let mut buf = ReplayBuffer::new(2, UpdatePolicy::Fifo).unwrap();
        let mut r = rng(0);
        for (i, v) in [1.0, 2.0, 3.0].into_iter().enumerate() {
            buf.insert(&item(v, i as u64 + 1), &mut r).unwrap();
        }
        let kept: Vec<f64> = buf.entries().map(|e| e.features[0]).collect();
        assert_eq!(kept, vec![2.0, 3.0]);
        assert_eq!(buf.seen_count(), 3);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mut buf = ReplayBuffer::new(4, UpdatePolicy::Fifo).unwrap();
        buf.insert(&item(1.0, 1), &mut rng(0)).unwrap();
        let wide = LabeledBatch::from_samples([(vec![1.0, 2.0, 3.0], 0)], 2).unwrap();
        assert!(matches!(
            buf.insert(&wide, &mut rng(0)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn retrieval_fallbacks() {
        let mut buf = ReplayBuffer::new(5, UpdatePolicy::Fifo).unwrap();
        assert!(buf.retrieve_uniform(3, &mut rng(1)).is_none());
        buf.insert(&item(7.0, 1), &mut rng(0)).unwrap();
        let b = buf.retrieve_uniform(3, &mut rng(1)).unwrap();
        assert_eq!(b.len(), 3);
        assert!((0..3).all(|i| b.features.row(i) == [7.0, -7.0]));

        for v in 1..5 {
            buf.insert(&item(v as f64, 1 + v), &mut rng(0)).unwrap();
        }
        let all = buf.retrieve_uniform(5, &mut rng(2)).unwrap();
        let mut got: Vec<f64> = (0..5).map(|i| all.features.row(i)[0]).collect();
        got.sort_by(f64::total_cmp);
        assert_eq!(got, vec![1.0, 2.0, 3.0, 4.0, 7.0]);
    }

    #[test]
    fn gss_fill_phase_inserts_everything() {
        let model = MlpParams::init(&[2, 4, 3], 0).unwrap();
        let mut buf = ReplayBuffer::new(10, UpdatePolicy::Gss).unwrap();
        let batch =
            LabeledBatch::from_samples((0..4).map(|i| (vec![i as f64, 1.0], i % 3)), 1).unwrap();
        let mut meter = FlopsCounter::default();
        gss_update(&mut buf, &batch, &model, 10, &mut rng(3), &mut meter).unwrap();
        assert_eq!(buf.len(), 4);
        assert!(buf.entries().all(|e| e.score == 1.0));
        gss_update(&mut buf, &batch, &model, 10, &mut rng(3), &mut meter).unwrap();
        assert_eq!(buf.len(), 8);
    }

    #[test]
    fn gss_rejects_plain_insert() {
        let mut buf = ReplayBuffer::new(2, UpdatePolicy::Gss).unwrap();
        assert!(buf.insert(&item(1.0, 1), &mut rng(0)).is_err());
    }

    #[test]
    fn orthogonal_gradients_score_one() {
        let score = gss_score(
            &[1.0, 0.0, 0.0],
            &[vec![0.0, 2.0, 0.0], vec![0.0, 0.0, -3.0]],
        );
        assert_eq!(score, 1.0);
        assert!((gss_score(&[1.0, 1.0], &[vec![2.0, 2.0]]) - 2.0).abs() < 1e-12);
        assert_eq!(gss_score(&[1.0, 0.0], &[]), 1.0);
    }

    #[test]
    fn gss_charge_per_call() {
        let model = MlpParams::init(&[2, 4, 3], 0).unwrap();
        let mut buf = ReplayBuffer::new(100, UpdatePolicy::Gss).unwrap();
        let batch =
            LabeledBatch::from_samples((0..5).map(|i| (vec![i as f64, 0.5], i % 3)), 1).unwrap();
        let mut meter = FlopsCounter::default();
        gss_update(&mut buf, &batch, &model, 10, &mut rng(0), &mut meter).unwrap();
        // Empty buffer: only the incoming gradients are computed.
        assert_eq!(meter.forward_sample_units(), 5);
        let mut meter = FlopsCounter::default();
        gss_update(&mut buf, &batch, &model, 10, &mut rng(0), &mut meter).unwrap();
        assert_eq!(meter.forward_sample_units(), 5 + 10 * 5);
        assert_eq!(meter.backward_sample_units(), 5 + 10 * 5);
    }

    #[test]
    fn mir_with_zero_lr_returns_leading_candidates() {
        let model = MlpParams::init(&[2, 5, 3], 4).unwrap();
        let mut buf = ReplayBuffer::new(50, UpdatePolicy::Fifo).unwrap();
        for i in 0..30 {
            buf.insert(&item(i as f64 * 0.1, i + 1), &mut rng(0))
                .unwrap();
        }
        let incoming = item(0.3, 31);
        let sel = mir_retrieve(
            &buf,
            &incoming,
            &model,
            0.0,
            9,
            3,
            &mut FlopsCounter::default(),
            &mut rng(8),
        )
        .unwrap()
        .unwrap();
        assert!(sel.candidate_scores.iter().all(|&s| s == 0.0));
        let uniform = buf.retrieve_uniform(9, &mut rng(8)).unwrap();
        for i in 0..3 {
            assert_eq!(sel.batch.features.row(i), uniform.features.row(i));
        }
    }

    #[test]
    fn mir_vacuous_selection_and_errors() {
        let model = MlpParams::init(&[2, 3], 4).unwrap();
        let mut buf = ReplayBuffer::new(50, UpdatePolicy::Fifo).unwrap();
        let incoming = item(1.0, 1);
        let mut meter = FlopsCounter::default();
        assert!(
            mir_retrieve(&buf, &incoming, &model, 0.1, 4, 4, &mut meter, &mut rng(0))
                .unwrap()
                .is_none()
        );
        assert_eq!(meter.forward_equivalents(), 0);
        assert!(mir_retrieve(&buf, &incoming, &model, 0.1, 2, 4, &mut meter, &mut rng(0)).is_err());
        for i in 0..10 {
            buf.insert(&item(i as f64, i + 1), &mut rng(0)).unwrap();
        }
        let sel = mir_retrieve(&buf, &incoming, &model, 0.1, 4, 4, &mut meter, &mut rng(5))
            .unwrap()
            .unwrap();
        let mut a: Vec<f64> = (0..4).map(|i| sel.batch.features.row(i)[0]).collect();
        let mut b: Vec<f64> = (0..4).map(|i| sel.candidates.features.row(i)[0]).collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
        // fwd+bwd on the incoming sample, two forwards per candidate.
        assert_eq!(meter.forward_sample_units(), 1 + 8);
        assert_eq!(meter.backward_sample_units(), 1);
    }

    #[test]
    fn dump_uses_stream_layout() {
        let dir = tempfile::tempdir().unwrap();
        let mut buf = ReplayBuffer::new(3, UpdatePolicy::Fifo).unwrap();
        for i in 0..3 {
            buf.insert(&item(i as f64, i + 1), &mut rng(0)).unwrap();
        }
        let path = dir.path().join("buf.csv");
        buf.dump_csv(&path, 3).unwrap();
        let table = crate::stream::read_table(&path).unwrap();
        assert_eq!(table.rows.len(), 3);
        assert_eq!(table.feature_dim, 2);
    }

    proptest::proptest! {
        #[test]
        fn capacity_is_never_exceeded(
            capacity in 1usize..20,
            sizes in proptest::collection::vec(1usize..8, 1..30),
            reservoir in proptest::bool::ANY,
            seed in 0u64..100
        ) {
            let policy = if reservoir { UpdatePolicy::Reservoir } else { UpdatePolicy::Fifo };
            let mut buf = ReplayBuffer::new(capacity, policy).unwrap();
            let mut r = rng(seed);
            let mut offered = 0u64;
            for (t, n) in sizes.into_iter().enumerate() {
                let batch = LabeledBatch::from_samples((0..n).map(|i| (vec![i as f64], 0)), t as u64 + 1).unwrap();
                buf.insert(&batch, &mut r).unwrap();
                offered += n as u64;
                proptest::prop_assert!(buf.len() <= capacity);
                proptest::prop_assert_eq!(buf.len() as u64, offered.min(capacity as u64));
                proptest::prop_assert_eq!(buf.seen_count(), offered);
            }
        }

        #[test]
        fn interference_ranking_is_descending(scores in proptest::collection::vec(-5.0f64..5.0, 1..17)) {
            let order = rank_by_interference(&scores);
            let mut sorted = order.clone();
            sorted.sort_unstable();
            proptest::prop_assert_eq!(sorted, (0..scores.len()).collect::<Vec<_>>());
            for w in order.windows(2) {
                proptest::prop_assert!(scores[w[0]] > scores[w[1]] || (scores[w[0]] == scores[w[1]] && w[0] < w[1]));
            }
        }
    }
}

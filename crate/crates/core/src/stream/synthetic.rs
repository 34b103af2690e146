use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{DriftMode, DriftSchedule, LabeledBatch};

/// Gaussian class prototypes with optional random-walk drift and a sliding
/// window of active classes.
#[derive(Clone, Debug)]
pub struct SyntheticStream {
    drift: DriftSchedule,
    batch_size: usize,
    classes: usize,
    rng: ChaCha8Rng,
    prototypes: Vec<Vec<f64>>,
    step: u64,
}

impl SyntheticStream {
    pub fn new(
        drift: DriftSchedule,
        feature_dim: usize,
        classes: usize,
        batch_size: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prototypes = (0..classes)
            .map(|_| {
                (0..feature_dim)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        SyntheticStream {
            drift,
            batch_size,
            classes,
            rng,
            prototypes,
            step: 0,
        }
    }

    /// Current prototype of `class`.
    pub fn prototype(&self, class: usize) -> &[f64] {
        &self.prototypes[class]
    }

    /// Classes that may be drawn at the current step.
    pub fn active_window(&self) -> (usize, usize) {
        match self.drift.mode {
            DriftMode::PhasedClasses => {
                let phase = self.step.saturating_sub(1) / self.drift.phase_length;
                (
                    (phase % self.classes as u64) as usize,
                    self.drift.active_classes,
                )
            }
            _ => (0, self.classes),
        }
    }

    fn walk(&mut self) {
        if self.drift.mode == DriftMode::Stationary || self.drift.sigma_drift == 0.0 {
            return;
        }
        let sigma = self.drift.sigma_drift;
        for proto in &mut self.prototypes {
            for v in proto.iter_mut() {
                *v += sigma * self.rng.sample::<f64, _>(StandardNormal);
            }
        }
    }

    /// One sample from the current step's distribution, using `rng`.
    pub fn draw_sample(&self, rng: &mut ChaCha8Rng) -> (Vec<f64>, usize) {
        let (first, width) = self.active_window();
        let label = (first + rng.random_range(0..width)) % self.classes;
        let sigma = self.drift.sigma_noise;
        let x = self.prototypes[label]
            .iter()
            .map(|&mu| {
                if sigma == 0.0 {
                    mu
                } else {
                    mu + sigma * rng.sample::<f64, _>(StandardNormal)
                }
            })
            .collect();
        (x, label)
    }

    pub fn next_batch(&mut self) -> Option<LabeledBatch> {
        self.step += 1;
        self.walk();
        let mut rng = self.rng.clone();
        let rows: Vec<_> = (0..self.batch_size)
            .map(|_| self.draw_sample(&mut rng))
            .collect();
        self.rng = rng;
        LabeledBatch::from_samples(rows, self.step)
    }
}

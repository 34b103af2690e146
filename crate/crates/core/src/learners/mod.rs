//! Training procedures behind one job interface. Every pass is charged to the
//! learner's FLOPs meter so relative complexities can be measured.

mod complexity;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::{self, ReplayBuffer, UpdatePolicy};
use crate::nn::{self, FlopsCounter, Gradients, MlpParams, Tensor};
use crate::rational::Rational;
use crate::schedule::TrainJob;
use crate::stream::LabeledBatch;

pub use complexity::{measure_relative_complexity, ComplexityMeasurement, ProbeSetup};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Er,
    ErMinus,
    ErPlus,
    Ace,
    Lwf,
    Rwalk,
    Polrs,
    Mir,
    Gss,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Er,
        Method::ErMinus,
        Method::ErPlus,
        Method::Ace,
        Method::Lwf,
        Method::Rwalk,
        Method::Polrs,
        Method::Mir,
        Method::Gss,
    ];

    /// The six compared methods (excluding the ER family).
    pub const COMPARED: [Method; 6] = [
        Method::Ace,
        Method::Lwf,
        Method::Rwalk,
        Method::Polrs,
        Method::Mir,
        Method::Gss,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Er => "ER",
            Method::ErMinus => "ER--",
            Method::ErPlus => "ER++",
            Method::Ace => "ACE",
            Method::Lwf => "LwF",
            Method::Rwalk => "RWalk",
            Method::Polrs => "PoLRS",
            Method::Mir => "MIR",
            Method::Gss => "GSS",
        }
    }

    /// Tabulated stream-model relative complexity at one GD step per job
    /// (GSS is listed at its rounded scheduling value).
    pub fn tabulated_complexity(&self) -> Rational {
        match self {
            Method::Er | Method::ErMinus | Method::ErPlus | Method::Ace => Rational::ONE,
            Method::Lwf => Rational::new(4, 3).expect("valid"),
            Method::Rwalk => Rational::integer(2),
            Method::Polrs => Rational::integer(3),
            Method::Mir => Rational::new(5, 2).expect("valid"),
            Method::Gss => Rational::integer(6),
        }
    }

    /// Cost used to schedule jobs from a measured complexity. GSS is
    /// rounded down to an integer number of steps.
    pub fn scheduling_cost(&self, measured: Rational) -> Rational {
        match self {
            Method::Gss => Rational::integer(measured.floor().max(1)),
            _ => measured,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Ok(match key.as_str() {
            "er" => Method::Er,
            "er--" | "er-minus" => Method::ErMinus,
            "er++" | "er-plus" => Method::ErPlus,
            "ace" => Method::Ace,
            "lwf" => Method::Lwf,
            "rwalk" => Method::Rwalk,
            "polrs" => Method::Polrs,
            "mir" => Method::Mir,
            "gss" => Method::Gss,
            _ => return Err(Error::Config(format!("unknown method {s:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LwfParams {
    pub lambda: f64,
    pub temperature: f64,
}

impl Default for LwfParams {
    fn default() -> Self {
        LwfParams {
            lambda: 1.0,
            temperature: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RwalkParams {
    pub lambda: f64,
    pub fisher_ema: f64,
    pub damping: f64,
    pub anchor_period: u64,
}

impl Default for RwalkParams {
    fn default() -> Self {
        RwalkParams {
            lambda: 2.0,
            fisher_ema: 0.9,
            damping: 1e-3,
            anchor_period: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolrsParams {
    pub lr_factor: f64,
    pub window: u64,
}

impl Default for PolrsParams {
    fn default() -> Self {
        PolrsParams {
            lr_factor: 2.0,
            window: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MirParams {
    /// Candidates drawn per job, as a multiple of the stream batch size.
    pub candidate_multiplier: usize,
}

impl Default for MirParams {
    fn default() -> Self {
        MirParams {
            candidate_multiplier: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GssParams {
    pub subset_multiplier: usize,
}

impl Default for GssParams {
    fn default() -> Self {
        GssParams {
            subset_multiplier: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSpec {
    pub method: Method,
    pub lr: f64,
    #[serde(default = "one")]
    pub gd_steps_per_job: Rational,
    /// Buffer update policy for non-GSS methods.
    #[serde(default)]
    pub update_policy: UpdatePolicy,
    #[serde(default)]
    pub lwf: LwfParams,
    #[serde(default)]
    pub rwalk: RwalkParams,
    #[serde(default)]
    pub polrs: PolrsParams,
    #[serde(default)]
    pub mir: MirParams,
    #[serde(default)]
    pub gss: GssParams,
}

fn one() -> Rational {
    Rational::ONE
}

impl LearnerSpec {
    pub fn new(method: Method, lr: f64) -> Self {
        LearnerSpec {
            method,
            lr,
            gd_steps_per_job: Rational::ONE,
            update_policy: UpdatePolicy::Fifo,
            lwf: LwfParams::default(),
            rwalk: RwalkParams::default(),
            polrs: PolrsParams::default(),
            mir: MirParams::default(),
            gss: GssParams::default(),
        }
    }

    /// Default learning rate per method: 5e-3, except 1e-3 for PoLRS.
    pub fn with_default_lr(method: Method) -> Self {
        let lr = if method == Method::Polrs { 1e-3 } else { 5e-3 };
        LearnerSpec::new(method, lr)
    }

    pub fn with_gd_steps(mut self, steps: Rational) -> Self {
        self.gd_steps_per_job = steps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.gd_steps_per_job.is_zero() {
            return bad("gd_steps_per_job must be positive".into());
        }
        if self.update_policy == UpdatePolicy::Gss {
            return bad("update_policy `gss` is implied by method gss".into());
        }
        match self.method {
            Method::Lwf if !(self.lwf.lambda >= 0.0 && self.lwf.temperature > 0.0) => {
                bad("lwf needs lambda >= 0 and temperature > 0".into())
            }
            Method::Rwalk
                if !(self.rwalk.lambda >= 0.0
                    && self.rwalk.fisher_ema > 0.0
                    && self.rwalk.fisher_ema < 1.0
                    && self.rwalk.damping > 0.0
                    && self.rwalk.anchor_period >= 1) =>
            {
                bad(
                    "rwalk needs lambda >= 0, fisher_ema in (0,1), damping > 0, anchor_period >= 1"
                        .into(),
                )
            }
            Method::Polrs if !(self.polrs.lr_factor >= 1.0 && self.polrs.window >= 1) => {
                bad("polrs needs lr_factor >= 1 and window >= 1".into())
            }
            Method::Mir if self.mir.candidate_multiplier < 1 => {
                bad("mir candidate_multiplier must be >= 1".into())
            }
            Method::Gss if self.gss.subset_multiplier < 1 => {
                bad("gss subset_multiplier must be >= 1".into())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug)]
struct RwalkState {
    fisher: Vec<f64>,
    path_score: Vec<f64>,
    anchor: Vec<f64>,
}

impl RwalkState {
    /// `1 / max(F + s)`, so importances lie in `[0, 1]`; 0 before any
    /// importance has accumulated.
    fn importance_scale(&self) -> f64 {
        let max = self
            .fisher
            .iter()
            .zip(&self.path_score)
            .map(|(f, s)| f + s)
            .fold(0.0, f64::max);
        if max > 0.0 {
            1.0 / max
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug)]
struct PolrsState {
    copies: [MlpParams; 3],
    lrs: [f64; 3],
    correct: [u64; 3],
    seen: u64,
    jobs_in_window: u64,
}

#[derive(Clone, Debug)]
enum MethodState {
    Plain,
    Lwf { teacher: MlpParams },
    Rwalk(RwalkState),
    Polrs(Box<PolrsState>),
}

/// Seed offset separating the learner's sampling RNG from weight init.
const RNG_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Debug)]
pub struct Learner {
    spec: LearnerSpec,
    params: MlpParams,
    buffer: ReplayBuffer,
    state: MethodState,
    gd_accumulator: Rational,
    rng: ChaCha8Rng,
    meter: FlopsCounter,
    gd_steps_done: u64,
    jobs_done: u64,
}

fn ce_gradients(
    params: &MlpParams,
    batch: &LabeledBatch,
    mask: Option<&[bool]>,
    meter: &mut FlopsCounter,
) -> Result<(Gradients, Tensor)> {
    let (logits, cache) = nn::forward(params, &batch.features, meter)?;
    let (_, dlogits) = nn::loss_ce(&logits, &batch.labels, mask)?;
    let grads = nn::backward(params, &cache, &dlogits, meter)?;
    Ok((grads, logits))
}

fn stack_rows(top: &Tensor, bottom: Option<&Tensor>) -> Result<Tensor> {
    match bottom {
        None => Ok(top.clone()),
        Some(b) => {
            let mut data = top.data().to_vec();
            data.extend_from_slice(b.data());
            Tensor::new(vec![top.rows() + b.rows(), top.cols()], data)
        }
    }
}

impl Learner {
    /// Fresh learner: seeded weights (identical across methods for the same
    /// seed and architecture), empty buffer, zeroed method state.
    pub fn new(
        spec: LearnerSpec,
        layer_dims: &[usize],
        buffer_capacity: usize,
        seed: u64,
    ) -> Result<Self> {
        spec.validate()?;
        let params = MlpParams::init(layer_dims, seed)?;
        let policy = if spec.method == Method::Gss {
            UpdatePolicy::Gss
        } else {
            spec.update_policy
        };
        let buffer = ReplayBuffer::new(buffer_capacity, policy)?;
        let state = match spec.method {
            Method::Lwf => MethodState::Lwf {
                teacher: params.clone(),
            },
            Method::Rwalk => MethodState::Rwalk(RwalkState {
                fisher: vec![0.0; params.num_scalars()],
                path_score: vec![0.0; params.num_scalars()],
                anchor: params.to_flat(),
            }),
            Method::Polrs => {
                let a = spec.polrs.lr_factor;
                MethodState::Polrs(Box::new(PolrsState {
                    copies: [params.clone(), params.clone(), params.clone()],
                    lrs: [spec.lr / a, spec.lr, spec.lr * a],
                    correct: [0; 3],
                    seen: 0,
                    jobs_in_window: 0,
                }))
            }
            _ => MethodState::Plain,
        };
        let meter = FlopsCounter::for_layer_dims(layer_dims);
        Ok(Learner {
            spec,
            params,
            buffer,
            state,
            gd_accumulator: Rational::ZERO,
            rng: ChaCha8Rng::seed_from_u64(seed.wrapping_add(RNG_STREAM)),
            meter,
            gd_steps_done: 0,
            jobs_done: 0,
        })
    }

    pub fn spec(&self) -> &LearnerSpec {
        &self.spec
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn meter(&self) -> &FlopsCounter {
        &self.meter
    }

    pub fn gd_steps_done(&self) -> u64 {
        self.gd_steps_done
    }

    pub fn jobs_done(&self) -> u64 {
        self.jobs_done
    }

    /// Current PoLRS learning rates (low, center, high).
    pub fn polrs_lrs(&self) -> Option<[f64; 3]> {
        match &self.state {
            MethodState::Polrs(s) => Some(s.lrs),
            _ => None,
        }
    }

    pub fn polrs_copies(&self) -> Option<&[MlpParams; 3]> {
        match &self.state {
            MethodState::Polrs(s) => Some(&s.copies),
            _ => None,
        }
    }

    pub fn lwf_teacher(&self) -> Option<&MlpParams> {
        match &self.state {
            MethodState::Lwf { teacher } => Some(teacher),
            _ => None,
        }
    }

    /// RWalk penalty `lambda * sum(w * (theta - theta*)^2)` at the current
    /// parameters, with `w = (F + s) / max(F + s)`.
    pub fn rwalk_penalty(&self) -> Option<f64> {
        let MethodState::Rwalk(s) = &self.state else {
            return None;
        };
        let scale = s.importance_scale();
        let total = self
            .params
            .iter()
            .zip(&s.anchor)
            .zip(s.fisher.iter().zip(&s.path_score))
            .map(|((p, a), (f, ps))| (f + ps) * scale * (p - a) * (p - a))
            .sum::<f64>();
        Some(self.spec.rwalk.lambda * total)
    }

    /// Fisher and path-score vectors (RWalk only).
    pub fn rwalk_importance(&self) -> Option<(&[f64], &[f64])> {
        match &self.state {
            MethodState::Rwalk(s) => Some((&s.fisher, &s.path_score)),
            _ => None,
        }
    }

    fn next_gd_steps(&mut self) -> u64 {
        self.gd_accumulator += self.spec.gd_steps_per_job;
        let steps = self.gd_accumulator.floor();
        self.gd_accumulator = self.gd_accumulator.fract();
        steps
    }

    fn memory_half(
        &mut self,
        stream: &LabeledBatch,
        first_step: bool,
    ) -> Result<Option<LabeledBatch>> {
        let n = stream.len();
        if self.spec.method == Method::Mir && first_step {
            let selection = memory::mir_retrieve(
                &self.buffer,
                stream,
                &self.params,
                self.spec.lr,
                self.spec.mir.candidate_multiplier * n,
                n,
                &mut self.meter,
                &mut self.rng,
            )?;
            return Ok(selection.map(|s| s.batch));
        }
        Ok(self.buffer.retrieve_uniform(n, &mut self.rng))
    }

    fn plain_step(&mut self, combined: &LabeledBatch, mask: Option<&[bool]>) -> Result<()> {
        let (grads, _) = ce_gradients(&self.params, combined, mask, &mut self.meter)?;
        self.params = nn::sgd_step(&self.params, &grads, self.spec.lr)?;
        Ok(())
    }

    fn ace_mask(stream: &LabeledBatch, combined: &LabeledBatch, classes: usize) -> Vec<bool> {
        let mut present = vec![false; classes];
        for &y in &stream.labels {
            present[y] = true;
        }
        let mut mask = Vec::with_capacity(combined.len() * classes);
        for row in 0..combined.len() {
            if row < stream.len() {
                mask.extend_from_slice(&present);
            } else {
                mask.extend(std::iter::repeat_n(true, classes));
            }
        }
        mask
    }

    fn lwf_step(
        &mut self,
        stream_len: usize,
        combined: &LabeledBatch,
        teacher_stream: &mut Option<Tensor>,
    ) -> Result<()> {
        let MethodState::Lwf { teacher } = &self.state else {
            unreachable!("lwf state");
        };
        // Teacher logits on the stream half are fixed for the whole job; the
        // memory half changes every step.
        if teacher_stream.is_none() {
            let x = Tensor::new(
                vec![stream_len, combined.features.cols()],
                combined.features.data()[..stream_len * combined.features.cols()].to_vec(),
            )?;
            *teacher_stream = Some(nn::forward(teacher, &x, &mut self.meter)?.0);
        }
        let memory_rows = combined.len() - stream_len;
        let teacher_memory = if memory_rows > 0 {
            let x = Tensor::new(
                vec![memory_rows, combined.features.cols()],
                combined.features.data()[stream_len * combined.features.cols()..].to_vec(),
            )?;
            Some(nn::forward(teacher, &x, &mut self.meter)?.0)
        } else {
            None
        };
        let teacher_logits = stack_rows(
            teacher_stream.as_ref().expect("set"),
            teacher_memory.as_ref(),
        )?;

        let (logits, cache) = nn::forward(&self.params, &combined.features, &mut self.meter)?;
        let (_, mut dlogits) = nn::loss_ce(&logits, &combined.labels, None)?;
        let lambda = self.spec.lwf.lambda;
        if lambda > 0.0 {
            let (_, dkl) = nn::kl_distill(&teacher_logits, &logits, self.spec.lwf.temperature)?;
            for (d, k) in dlogits.data_mut().iter_mut().zip(dkl.data()) {
                *d += lambda * k;
            }
        }
        let grads = nn::backward(&self.params, &cache, &dlogits, &mut self.meter)?;
        self.params = nn::sgd_step(&self.params, &grads, self.spec.lr)?;
        Ok(())
    }

    fn rwalk_step(&mut self, combined: &LabeledBatch) -> Result<()> {
        let (ce_grads, _) = ce_gradients(&self.params, combined, None, &mut self.meter)?;
        // Importance bookkeeping pass.
        self.meter.charge_forward(combined.len());
        self.meter.charge_backward(combined.len());

        let cfg = self.spec.rwalk.clone();
        let MethodState::Rwalk(state) = &mut self.state else {
            unreachable!("rwalk state");
        };
        let g = ce_grads.to_flat();
        let total = if cfg.lambda > 0.0 {
            let scale = state.importance_scale();
            let mut total = g.clone();
            for (i, (t, p)) in total.iter_mut().zip(self.params.iter()).enumerate() {
                let importance = (state.fisher[i] + state.path_score[i]) * scale;
                *t += 2.0 * cfg.lambda * importance * (p - state.anchor[i]);
            }
            Gradients::from_flat_like(&self.params, &total)?
        } else {
            ce_grads
        };
        let next = nn::sgd_step(&self.params, &total, self.spec.lr)?;
        for (i, (new, old)) in next.iter().zip(self.params.iter()).enumerate() {
            let delta = new - old;
            let f = cfg.fisher_ema * state.fisher[i] + (1.0 - cfg.fisher_ema) * g[i] * g[i];
            state.fisher[i] = f;
            let gain = (-g[i] * delta).max(0.0);
            state.path_score[i] += gain / (0.5 * f * delta * delta + cfg.damping);
        }
        self.params = next;
        Ok(())
    }

    fn polrs_step(
        &mut self,
        stream_len: usize,
        combined: &LabeledBatch,
        first_step: bool,
    ) -> Result<()> {
        let MethodState::Polrs(state) = &mut self.state else {
            unreachable!("polrs state");
        };
        for c in 0..3 {
            let (grads, logits) = ce_gradients(&state.copies[c], combined, None, &mut self.meter)?;
            if first_step {
                let preds = nn::argmax_rows(&logits);
                state.correct[c] += preds[..stream_len]
                    .iter()
                    .zip(&combined.labels[..stream_len])
                    .filter(|(p, y)| p == y)
                    .count() as u64;
            }
            state.copies[c] = nn::sgd_step(&state.copies[c], &grads, state.lrs[c])?;
        }
        if first_step {
            state.seen += stream_len as u64;
        }
        self.params = state.copies[1].clone();
        Ok(())
    }

    fn polrs_end_of_job(&mut self) {
        let factor = self.spec.polrs.lr_factor;
        let window = self.spec.polrs.window;
        let MethodState::Polrs(state) = &mut self.state else {
            return;
        };
        state.jobs_in_window += 1;
        if state.jobs_in_window < window {
            return;
        }
        let mut best = 1;
        for c in [0, 2] {
            if state.correct[c] > state.correct[best] {
                best = c;
            }
        }
        let best_lr = state.lrs[best];
        let winner = state.copies[best].clone();
        state.copies = [winner.clone(), winner.clone(), winner];
        state.lrs = [best_lr / factor, best_lr, best_lr * factor];
        state.correct = [0; 3];
        state.seen = 0;
        state.jobs_in_window = 0;
        self.params = state.copies[1].clone();
    }

    fn rwalk_end_of_job(&mut self) {
        let period = self.spec.rwalk.anchor_period;
        let jobs = self.jobs_done;
        let MethodState::Rwalk(state) = &mut self.state else {
            return;
        };
        if jobs.is_multiple_of(period) {
            state.anchor = self.params.to_flat();
            for s in &mut state.path_score {
                *s *= 0.5;
            }
        }
    }

    /// Runs one training job on `stream_batch` (see [`TrainJob`]).
    pub fn train(&mut self, stream_batch: &LabeledBatch) -> Result<()> {
        let steps = self.next_gd_steps();
        let n = stream_batch.len();
        if let MethodState::Lwf { teacher } = &mut self.state {
            *teacher = self.params.clone();
        }
        let mut teacher_stream = None;
        for j in 0..steps {
            let first = j == 0;
            let memory = self.memory_half(stream_batch, first)?;
            let combined = match &memory {
                Some(m) => stream_batch.concat(m)?,
                None => stream_batch.clone(),
            };
            match self.spec.method {
                Method::Er | Method::ErMinus | Method::ErPlus | Method::Mir | Method::Gss => {
                    self.plain_step(&combined, None)?
                }
                Method::Ace => {
                    let mask = Self::ace_mask(stream_batch, &combined, self.params.class_count());
                    self.plain_step(&combined, Some(&mask))?
                }
                Method::Lwf => self.lwf_step(n, &combined, &mut teacher_stream)?,
                Method::Rwalk => self.rwalk_step(&combined)?,
                Method::Polrs => self.polrs_step(n, &combined, first)?,
            }
            self.gd_steps_done += 1;
        }

        if self.spec.method == Method::Gss {
            memory::gss_update(
                &mut self.buffer,
                stream_batch,
                &self.params,
                self.spec.gss.subset_multiplier,
                &mut self.rng,
                &mut self.meter,
            )?;
        } else {
            self.buffer.insert(stream_batch, &mut self.rng)?;
        }
        self.jobs_done += 1;
        self.rwalk_end_of_job();
        self.polrs_end_of_job();
        Ok(())
    }
}

impl TrainJob for Learner {
    fn params(&self) -> &MlpParams {
        &self.params
    }

    fn train_job(&mut self, batch: &LabeledBatch) -> Result<()> {
        self.train(batch)
    }
}

#[cfg(test)]
mod tests;

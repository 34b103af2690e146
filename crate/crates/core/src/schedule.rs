//! Real-time evaluation: a fixed-rate stream, training jobs that cost `k`
//! stream steps, stale-model predictions and skipped batches. Also the
//! slow-stream mode in which every batch is trained to completion.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::MetricsLog;
use crate::nn::{self, MlpParams};
use crate::rational::Rational;
use crate::stream::LabeledBatch;

/// Anything the runners can train: one job per call, exposing the
/// parameters that would be deployed once the job completes.
pub trait TrainJob {
    fn params(&self) -> &MlpParams;
    fn train_job(&mut self, batch: &LabeledBatch) -> Result<()>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityProfile {
    /// Training cost of one job, in stream steps at unit speed.
    pub cost: Rational,
    /// How many times faster the stream runs than the reference learner.
    pub stream_speed_multiplier: Rational,
}

impl ComplexityProfile {
    pub fn new(cost: Rational) -> Self {
        ComplexityProfile {
            cost,
            stream_speed_multiplier: Rational::ONE,
        }
    }

    pub fn with_speed(mut self, multiplier: Rational) -> Self {
        self.stream_speed_multiplier = multiplier;
        self
    }

    /// `s * k`, floored at one step: a job cannot finish before the next
    /// batch arrives.
    pub fn effective_cost(&self) -> Rational {
        let k = self.cost * self.stream_speed_multiplier;
        if k < Rational::ONE {
            Rational::ONE
        } else {
            k
        }
    }

    /// Stream steps revealed while one job is in flight.
    pub fn delay(&self) -> Rational {
        self.effective_cost() - Rational::ONE
    }
}

/// Fractional-cost job planner: a job starts at the first step `t` with
/// `t >= next_train_time`, which then advances by `k`.
#[derive(Clone, Debug)]
pub struct JobPlanner {
    cost: Rational,
    next_train_time: Rational,
}

impl JobPlanner {
    pub fn new(cost: Rational) -> Self {
        JobPlanner {
            cost: if cost < Rational::ONE {
                Rational::ONE
            } else {
                cost
            },
            next_train_time: Rational::ONE,
        }
    }

    /// Whether a job starts at step `t`. Must be called once per revealed
    /// step, in increasing order.
    pub fn is_job_start(&mut self, t: u64) -> bool {
        let now = Rational::integer(t);
        if now < self.next_train_time {
            return false;
        }
        // After a gap in the stream the learner idles until data arrives.
        let base = if self.next_train_time <= Rational::integer(t.saturating_sub(1)) {
            now
        } else {
            self.next_train_time
        };
        self.next_train_time = base + self.cost;
        true
    }
}

/// Job-start steps in `1..=steps` for cost `k` (values below 1 act as 1).
pub fn plan_training_steps(k: Rational, steps: u64) -> Vec<u64> {
    let mut planner = JobPlanner::new(k);
    (1..=steps).filter(|&t| planner.is_job_start(t)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeployedModel {
    pub params: MlpParams,
    pub version: u64,
}

impl DeployedModel {
    fn publish(&mut self, params: MlpParams) {
        self.params = params;
        self.version += 1;
    }
}

#[derive(Clone, Debug)]
pub struct TrainingJob {
    pub start_step: u64,
    pub cost: Rational,
    /// Parameters the job will publish on completion.
    pub result: MlpParams,
}

/// When a completed job becomes visible relative to the evaluation at the
/// job-start step that retires it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PublishOrder {
    /// A job started at `s` serves predictions from step `s + k` on
    /// (delay `k - 1`; `k = 1` coincides with the slow-stream runner).
    #[default]
    BeforePredict,
    /// The step that retires a job still predicts with the older model
    /// (one extra step of staleness).
    AfterPredict,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Event {
    Evaluated { step: u64, version: u64 },
    JobStarted { step: u64 },
    Published { step: u64, version: u64 },
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub publish: PublishOrder,
    /// Steps after which the deployed model is snapshotted into the log.
    pub snapshot_steps: Vec<u64>,
    /// Record an ordered event trace (for protocol checks).
    pub trace: bool,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub deployed: DeployedModel,
    pub events: Vec<Event>,
    /// Job still running when the stream ended (never published).
    pub in_flight: Option<TrainingJob>,
}

fn evaluate(
    deployed: &DeployedModel,
    batch: &LabeledBatch,
    trained: bool,
    metrics: &mut MetricsLog,
) -> Result<()> {
    let preds = nn::predict(&deployed.params, &batch.features)?;
    metrics.record_step(batch.step, &preds, &batch.labels, deployed.version, trained)
}

/// Real-time runner. At every step the deployed model predicts the revealed
/// batch before its labels are used; at job-start steps the previous job's
/// result is published and a new job starts on the current batch. Batches
/// revealed while a job is in flight are never trained on.
pub fn run_realtime<L: TrainJob>(
    stream: impl IntoIterator<Item = LabeledBatch>,
    learner: &mut L,
    profile: &ComplexityProfile,
    metrics: &mut MetricsLog,
    opts: &RunOptions,
) -> Result<RunOutcome> {
    let cost = profile.effective_cost();
    let mut planner = JobPlanner::new(cost);
    let mut deployed = DeployedModel {
        params: learner.params().clone(),
        version: 0,
    };
    let mut in_flight: Option<TrainingJob> = None;
    let mut events = Vec::new();
    let mut log = |e: Event| {
        if opts.trace {
            events.push(e);
        }
    };

    for batch in stream {
        let t = batch.step;
        let starts = planner.is_job_start(t);
        let mut publish = |deployed: &mut DeployedModel, log: &mut dyn FnMut(Event)| {
            if let Some(job) = in_flight.take() {
                deployed.publish(job.result);
                log(Event::Published {
                    step: t,
                    version: deployed.version,
                });
            }
        };
        if starts && opts.publish == PublishOrder::BeforePredict {
            publish(&mut deployed, &mut log);
        }
        evaluate(&deployed, &batch, starts, metrics)?;
        log(Event::Evaluated {
            step: t,
            version: deployed.version,
        });
        if starts {
            if opts.publish == PublishOrder::AfterPredict {
                publish(&mut deployed, &mut log);
            }
            learner.train_job(&batch)?;
            log(Event::JobStarted { step: t });
            in_flight = Some(TrainingJob {
                start_step: t,
                cost,
                result: learner.params().clone(),
            });
        }
        if opts.snapshot_steps.contains(&t) {
            metrics.snapshot(t, &deployed.params);
        }
    }
    Ok(RunOutcome {
        deployed,
        events,
        in_flight,
    })
}

/// Slow-stream runner: predict, then train on the batch to completion
/// before the next step. The model version advances every step.
pub fn run_slowstream<L: TrainJob>(
    stream: impl IntoIterator<Item = LabeledBatch>,
    learner: &mut L,
    metrics: &mut MetricsLog,
    opts: &RunOptions,
) -> Result<RunOutcome> {
    let mut deployed = DeployedModel {
        params: learner.params().clone(),
        version: 0,
    };
    let mut events = Vec::new();
    for batch in stream {
        let t = batch.step;
        evaluate(&deployed, &batch, true, metrics)?;
        learner.train_job(&batch)?;
        deployed.publish(learner.params().clone());
        if opts.trace {
            events.push(Event::Evaluated {
                step: t,
                version: deployed.version - 1,
            });
            events.push(Event::JobStarted { step: t });
            events.push(Event::Published {
                step: t,
                version: deployed.version,
            });
        }
        if opts.snapshot_steps.contains(&t) {
            metrics.snapshot(t, &deployed.params);
        }
    }
    Ok(RunOutcome {
        deployed,
        events,
        in_flight: None,
    })
}

//! Single-run orchestration: build the stream, fix the complexity, run,
//! collect metrics, persist `steps.jsonl` and `summary.csv`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::learners::{
    measure_relative_complexity, ComplexityMeasurement, Learner, LearnerSpec, Method, ProbeSetup,
};
use crate::metrics::{self, snapshot_steps, MetricsLog};
use crate::nn::MlpParams;
use crate::rational::Rational;
use crate::schedule::{run_realtime, run_slowstream, ComplexityProfile, Event, RunOptions};
use crate::stream::{build_stream, holdout_split, HeldOutSet};

use super::config::{ComplexitySource, RunConfig, RunMode};

pub const LOG_FILE: &str = "steps.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const CONFIG_FILE: &str = "config.toml";

/// Seed offset for the holdout draw, so it is independent of the stream.
const HOLDOUT_SEED: u64 = 0x686f_6c64;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResolvedComplexity {
    /// Relative complexity as measured or tabulated.
    pub complexity: Rational,
    /// Cost used to schedule jobs (GSS rounded down).
    pub scheduling_cost: Rational,
    pub measurement: Option<ComplexityMeasurement>,
}

/// Tabulated complexity at one or two GD steps per job.
pub fn table_complexity(spec: &LearnerSpec) -> Result<Rational> {
    let gd = spec.gd_steps_per_job;
    if matches!(spec.method, Method::Er | Method::ErMinus | Method::ErPlus) {
        return Ok(gd);
    }
    if gd == Rational::ONE {
        return Ok(spec.method.tabulated_complexity());
    }
    if gd == Rational::integer(2) {
        return Ok(match spec.method {
            Method::Ace => Rational::integer(2),
            Method::Lwf => Rational::new(5, 2)?,
            Method::Rwalk => Rational::integer(4),
            Method::Polrs => Rational::integer(6),
            Method::Mir => Rational::new(7, 2)?,
            Method::Gss => Rational::integer(7),
            Method::Er | Method::ErMinus | Method::ErPlus => unreachable!("handled above"),
        });
    }
    Err(Error::Config(format!(
        "no tabulated complexity for {} at {gd} GD steps per job",
        spec.method
    )))
}

pub fn resolve_complexity(cfg: &RunConfig) -> Result<ResolvedComplexity> {
    let method = cfg.learner.method;
    match cfg.complexity {
        ComplexitySource::Fixed(k) => Ok(ResolvedComplexity {
            complexity: k,
            scheduling_cost: k,
            measurement: None,
        }),
        ComplexitySource::Table => {
            let k = table_complexity(&cfg.learner)?;
            Ok(ResolvedComplexity {
                complexity: k,
                scheduling_cost: method.scheduling_cost(k),
                measurement: None,
            })
        }
        ComplexitySource::Measured => {
            let reference = LearnerSpec {
                update_policy: cfg.learner.update_policy,
                ..LearnerSpec::new(Method::Er, cfg.learner.lr)
            };
            let probe = ProbeSetup::standard(&cfg.layer_dims(), cfg.buffer_capacity, cfg.seed);
            let m = measure_relative_complexity(&cfg.learner, &reference, &probe)?;
            let k = match m.reported {
                Some(k) => k,
                None => Rational::approximate(m.ratio, 1e-3, 10_000)
                    .ok_or_else(|| Error::Numeric(format!("complexity ratio {}", m.ratio)))?,
            };
            Ok(ResolvedComplexity {
                complexity: k,
                scheduling_cost: method.scheduling_cost(k),
                measurement: Some(m),
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub method: Method,
    pub mode: RunMode,
    pub seed: u64,
    pub lr: f64,
    pub gd_steps_per_job: Rational,
    pub buffer_capacity: usize,
    pub stream_speed_multiplier: Rational,
    pub complexity: Rational,
    /// Stream steps per job after speed scaling (1 in slow-stream mode).
    pub effective_k: Rational,
    pub steps: u64,
    pub samples: u64,
    pub avg_online_accuracy: Option<f64>,
    pub backward_transfer: Option<f64>,
    /// `(snapshot step, accuracy on later held-out samples)`.
    pub forward_transfer: Vec<(u64, Option<f64>)>,
    pub raw_flops: u64,
    pub trained_fraction: Option<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl RunSummary {
    pub fn csv_header(&self) -> Vec<String> {
        let mut h: Vec<String> = [
            "method",
            "mode",
            "seed",
            "lr",
            "gd_steps_per_job",
            "buffer_capacity",
            "stream_speed_multiplier",
            "complexity",
            "effective_k",
            "steps",
            "samples",
            "avg_online_accuracy",
            "backward_transfer",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        h.extend(
            self.forward_transfer
                .iter()
                .map(|(t, _)| format!("forward_transfer_at_{t}")),
        );
        h.push("raw_flops".into());
        h.push("trained_fraction".into());
        h
    }

    pub fn csv_row(&self) -> Vec<String> {
        let mode = match self.mode {
            RunMode::Realtime => "realtime",
            RunMode::Slowstream => "slowstream",
        };
        let mut r = vec![
            self.method.name().to_string(),
            mode.to_string(),
            self.seed.to_string(),
            self.lr.to_string(),
            self.gd_steps_per_job.to_string(),
            self.buffer_capacity.to_string(),
            self.stream_speed_multiplier.to_string(),
            self.complexity.to_string(),
            self.effective_k.to_string(),
            self.steps.to_string(),
            self.samples.to_string(),
            opt(self.avg_online_accuracy),
            opt(self.backward_transfer),
        ];
        r.extend(self.forward_transfer.iter().map(|(_, v)| opt(*v)));
        r.push(self.raw_flops.to_string());
        r.push(opt(self.trained_fraction));
        r
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let to_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
        let mut w = csv::Writer::from_path(path).map_err(to_err)?;
        w.write_record(self.csv_header()).map_err(to_err)?;
        w.write_record(self.csv_row()).map_err(to_err)?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub summary: RunSummary,
    pub log: MetricsLog,
    pub final_params: MlpParams,
    pub held: HeldOutSet,
    pub events: Vec<Event>,
    /// Directory holding the per-step log and summary, when persisted.
    pub out_dir: Option<PathBuf>,
}

impl RunResult {
    pub fn log_path(&self) -> Option<PathBuf> {
        self.out_dir.as_ref().map(|d| d.join(LOG_FILE))
    }
}

/// Executes a run in memory.
pub fn execute(cfg: &RunConfig) -> Result<RunResult> {
    execute_traced(cfg, false)
}

/// As [`execute`], optionally recording the runner's event trace.
pub fn execute_traced(cfg: &RunConfig, trace: bool) -> Result<RunResult> {
    cfg.validate()?;
    let resolved = resolve_complexity(cfg)?;
    let spec = cfg.seeded_stream();
    let (stream, held) = if cfg.holdout_fraction > 0.0 {
        holdout_split(&spec, cfg.holdout_fraction, cfg.seed ^ HOLDOUT_SEED)?
    } else {
        (build_stream(&spec)?, HeldOutSet::default())
    };
    let dims = cfg.layer_dims();
    let mut learner = Learner::new(cfg.learner.clone(), &dims, cfg.buffer_capacity, cfg.seed)?;
    let opts = RunOptions {
        publish: cfg.publish,
        snapshot_steps: snapshot_steps(spec.steps, &cfg.snapshot_fractions),
        trace,
    };
    let mut log = MetricsLog::default();
    let (outcome, effective_k) = match cfg.mode {
        RunMode::Realtime => {
            let profile = ComplexityProfile::new(resolved.scheduling_cost)
                .with_speed(cfg.stream_speed_multiplier);
            let out = run_realtime(stream, &mut learner, &profile, &mut log, &opts)?;
            (out, profile.effective_cost())
        }
        RunMode::Slowstream => (
            run_slowstream(stream, &mut learner, &mut log, &opts)?,
            Rational::ONE,
        ),
    };

    let final_params = outcome.deployed.params;
    let backward_transfer = (!held.is_empty())
        .then(|| metrics::backward_transfer(&final_params, &held, spec.steps).ok())
        .flatten();
    let forward_transfer = log
        .snapshots()
        .iter()
        .map(|(t, params)| {
            let acc = (!held.is_empty())
                .then(|| metrics::forward_transfer(params, &held, t + 1).ok())
                .flatten();
            (*t, acc)
        })
        .collect();
    let summary = RunSummary {
        method: cfg.learner.method,
        mode: cfg.mode,
        seed: cfg.seed,
        lr: cfg.learner.lr,
        gd_steps_per_job: cfg.learner.gd_steps_per_job,
        buffer_capacity: cfg.buffer_capacity,
        stream_speed_multiplier: cfg.stream_speed_multiplier,
        complexity: resolved.complexity,
        effective_k,
        steps: log.records().len() as u64,
        samples: log.records().iter().map(|r| r.n as u64).sum(),
        avg_online_accuracy: log.average_online_accuracy(),
        backward_transfer,
        forward_transfer,
        raw_flops: learner.meter().raw_flops(),
        trained_fraction: log.trained_fraction(),
    };
    Ok(RunResult {
        summary,
        log,
        final_params,
        held,
        events: outcome.events,
        out_dir: None,
    })
}

/// Executes a run and writes `steps.jsonl`, `summary.csv` and the resolved
/// `config.toml` into `out_dir`.
pub fn cmd_run(cfg: &RunConfig, out_dir: &Path) -> Result<RunResult> {
    let mut result = execute(cfg)?;
    persist(&result, cfg, out_dir)?;
    result.out_dir = Some(out_dir.to_path_buf());
    Ok(result)
}

pub(crate) fn persist(result: &RunResult, cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let log_path = out_dir.join(LOG_FILE);
    let file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut w = BufWriter::new(file);
    result
        .log
        .write_jsonl(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&log_path, e))?;
    result.summary.write_csv(&out_dir.join(SUMMARY_FILE))?;
    cfg.write(&out_dir.join(CONFIG_FILE))
}

//! Matched comparisons against replay baselines.
//!
//! Fast mode runs the method in real time next to ER and ER-- (ER with
//! `k` GD steps per job on the method's schedule, so both see the same
//! delay). Slow mode runs everything to completion next to ER++ (ER with
//! `k` GD steps per batch, so both spend the same compute).

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{LearnerSpec, Method};
use crate::par::Execution;
use crate::rational::Rational;
use crate::stats;

use super::config::{ComplexitySource, RunConfig, RunMode};
use super::run::resolve_complexity;
use super::{csv_err, run_all, Aggregate};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompareMode {
    Fast,
    Slow,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareRow {
    pub label: String,
    pub method: Method,
    pub gd_steps_per_job: Rational,
    pub config: RunConfig,
    pub results: Aggregate,
    /// One-sided paired p-value for "this row beats the compared method"
    /// (baseline rows with at least two seeds).
    pub p_beats_method: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareReport {
    pub mode: CompareMode,
    /// Complexity of the compared method (before any rounding).
    pub complexity: Rational,
    /// Stream steps per job used for the method in fast mode.
    pub scheduling_cost: Rational,
    /// Method first, then ER, then the matched baseline when `k > 1`.
    pub rows: Vec<CompareRow>,
}

fn baseline(cfg: &RunConfig, method: Method, gd: Rational) -> RunConfig {
    let mut c = cfg.clone();
    c.learner = LearnerSpec {
        update_policy: cfg.learner.update_policy,
        ..cfg.default_learner(method).with_gd_steps(gd)
    };
    c
}

/// `(complexity, scheduling cost, labelled configs)` of a comparison.
pub type ComparePlan = (Rational, Rational, Vec<(String, RunConfig)>);

/// Configurations compared in `mode`: `(label, config)`.
pub fn compare_configs(cfg: &RunConfig, mode: CompareMode) -> Result<ComparePlan> {
    if matches!(
        cfg.learner.method,
        Method::Er | Method::ErMinus | Method::ErPlus
    ) {
        return Err(Error::Config(format!(
            "compare expects a non-replay-baseline method, got {}",
            cfg.learner.method
        )));
    }
    let resolved = resolve_complexity(cfg)?;
    let (k, sched) = (resolved.complexity, resolved.scheduling_cost);
    let run_mode = match mode {
        CompareMode::Fast => RunMode::Realtime,
        CompareMode::Slow => RunMode::Slowstream,
    };
    let mut method_cfg = cfg.clone();
    method_cfg.mode = run_mode;
    method_cfg.complexity = ComplexitySource::Fixed(sched);

    let mut er = baseline(cfg, Method::Er, Rational::ONE);
    er.mode = run_mode;
    er.complexity = ComplexitySource::Fixed(Rational::ONE);

    let mut out = vec![
        (cfg.learner.method.name().to_string(), method_cfg),
        ("ER".to_string(), er),
    ];
    match mode {
        CompareMode::Fast if sched > Rational::ONE => {
            let mut m = baseline(cfg, Method::ErMinus, sched);
            m.mode = run_mode;
            m.complexity = ComplexitySource::Fixed(sched);
            out.push((format!("ER--({sched})"), m));
        }
        CompareMode::Slow if k > Rational::ONE => {
            let mut m = baseline(cfg, Method::ErPlus, k);
            m.mode = run_mode;
            m.complexity = ComplexitySource::Fixed(k);
            out.push((format!("ER++({k})"), m));
        }
        _ => {}
    }
    Ok((k, sched, out))
}

pub fn cmd_compare(cfg: &RunConfig, mode: CompareMode, exec: Execution) -> Result<CompareReport> {
    let (complexity, scheduling_cost, variants) = compare_configs(cfg, mode)?;
    let configs: Vec<RunConfig> = variants.iter().map(|(_, c)| c.clone()).collect();
    let grouped = run_all(&configs, exec)?;
    let aggregates: Vec<Aggregate> = grouped
        .iter()
        .map(|s| Aggregate::from_summaries(s))
        .collect();
    let method_acc = aggregates[0].accuracies.clone();
    let rows = variants
        .into_iter()
        .zip(aggregates)
        .enumerate()
        .map(|(i, ((label, config), results))| {
            let p_beats_method = (i > 0 && results.accuracies.len() >= 2)
                .then(|| stats::paired_t_test_greater(&results.accuracies, &method_acc).ok())
                .flatten();
            CompareRow {
                label,
                method: config.learner.method,
                gd_steps_per_job: config.learner.gd_steps_per_job,
                config,
                results,
                p_beats_method,
            }
        })
        .collect();
    Ok(CompareReport {
        mode,
        complexity,
        scheduling_cost,
        rows,
    })
}

impl CompareReport {
    pub fn row(&self, label: &str) -> Option<&CompareRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<12} {:>8} {:>10} {:>8} {:>10} {:>9} {:>12}",
            "run", "gd_steps", "mean_acc", "sd", "trained", "p_beats", "raw_flops"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<12} {:>8} {:>10.4} {:>8} {:>10.4} {:>9} {:>12.3e}",
                r.label,
                r.gd_steps_per_job.to_string(),
                r.results.mean_accuracy,
                r.results
                    .sd_accuracy
                    .map(|v| format!("{v:.4}"))
                    .unwrap_or_else(|| "-".into()),
                r.results.mean_trained_fraction,
                r.p_beats_method
                    .map(|v| format!("{v:.4}"))
                    .unwrap_or_else(|| "-".into()),
                r.results.mean_raw_flops,
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let err = csv_err(path);
        let mut w = csv::Writer::from_path(path).map_err(&err)?;
        w.write_record([
            "label",
            "method",
            "gd_steps_per_job",
            "seeds",
            "mean_accuracy",
            "sd_accuracy",
            "mean_trained_fraction",
            "mean_raw_flops",
            "p_beats_method",
        ])
        .map_err(&err)?;
        for r in &self.rows {
            w.write_record([
                r.label.clone(),
                r.method.name().to_string(),
                r.gd_steps_per_job.to_string(),
                r.results.seeds.len().to_string(),
                r.results.mean_accuracy.to_string(),
                r.results
                    .sd_accuracy
                    .map(|v| v.to_string())
                    .unwrap_or_default(),
                r.results.mean_trained_fraction.to_string(),
                r.results.mean_raw_flops.to_string(),
                r.p_beats_method.map(|v| v.to_string()).unwrap_or_default(),
            ])
            .map_err(&err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::plan_training_steps;

    fn cfg(method: &str) -> RunConfig {
        RunConfig::from_toml_str(&format!(
            "preset = \"small-scale\"\nrepeats = 2\n[stream]\nsteps = 120\n[learner]\nmethod = \"{method}\""
        ))
        .unwrap()
    }

    #[test]
    fn fast_mode_matches_schedule() {
        let (_, sched, v) = compare_configs(&cfg("rwalk"), CompareMode::Fast).unwrap();
        assert_eq!(sched, Rational::integer(2));
        assert_eq!(v.len(), 3);
        let (_, erm) = &v[2];
        assert_eq!(erm.learner.method, Method::ErMinus);
        assert_eq!(erm.learner.gd_steps_per_job, Rational::integer(2));
        let method_k = resolve_complexity(&v[0].1).unwrap().scheduling_cost;
        let erm_k = resolve_complexity(erm).unwrap().scheduling_cost;
        assert_eq!(
            plan_training_steps(method_k, 120),
            plan_training_steps(erm_k, 120)
        );
    }

    #[test]
    fn unit_cost_is_two_way() {
        let (_, _, v) = compare_configs(&cfg("ace"), CompareMode::Fast).unwrap();
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn slow_mode_matches_compute() {
        let report = cmd_compare(&cfg("mir"), CompareMode::Slow, Execution::Sequential).unwrap();
        let mir = report.rows[0].results.mean_raw_flops;
        let erpp = report.row("ER++(5/2)").unwrap().results.mean_raw_flops;
        assert!(((erpp - mir) / mir).abs() < 0.02, "{erpp} vs {mir}");
        assert!(report.rows[1].p_beats_method.is_some());
        assert!(report.to_table().lines().count() == 4);
    }

    #[test]
    fn baselines_rejected_as_subject() {
        assert!(compare_configs(&cfg("er"), CompareMode::Fast).is_err());
    }
}

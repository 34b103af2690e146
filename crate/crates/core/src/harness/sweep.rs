//! One-axis sweeps (learning rate, buffer size, stream speed, GD steps)
//! over one or more methods.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{LearnerSpec, Method};
use crate::par::Execution;
use crate::rational::Rational;
use crate::stream::prefix_steps;

use super::config::RunConfig;
use super::{csv_err, run_all, Aggregate};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    Lr,
    Memory,
    Speed,
    GdSteps,
}

#[derive(Clone, Debug, PartialEq)]
enum AxisValue {
    Lr(f64),
    Memory(usize),
    Ratio(Rational),
}

impl AxisValue {
    fn label(&self) -> String {
        match self {
            AxisValue::Lr(v) => v.to_string(),
            AxisValue::Memory(v) => v.to_string(),
            AxisValue::Ratio(v) => v.to_string(),
        }
    }

    fn key(&self) -> f64 {
        match self {
            AxisValue::Lr(v) => *v,
            AxisValue::Memory(v) => *v as f64,
            AxisValue::Ratio(v) => v.to_f64(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub method: Method,
    pub axis: SweepAxis,
    pub value: String,
    pub results: Aggregate,
}

fn axis_values(cfg: &RunConfig, axis: SweepAxis) -> Vec<AxisValue> {
    let s = &cfg.sweep;
    let ratios = |v: &[Rational], default: &[u64]| -> Vec<AxisValue> {
        if v.is_empty() {
            default
                .iter()
                .map(|&k| AxisValue::Ratio(Rational::integer(k)))
                .collect()
        } else {
            v.iter().copied().map(AxisValue::Ratio).collect()
        }
    };
    match axis {
        SweepAxis::Lr if s.lr.is_empty() => [1e-3, 5e-3, 1e-2, 5e-2].map(AxisValue::Lr).to_vec(),
        SweepAxis::Lr => s.lr.iter().copied().map(AxisValue::Lr).collect(),
        SweepAxis::Memory if s.memory.is_empty() => [100, 200, 400].map(AxisValue::Memory).to_vec(),
        SweepAxis::Memory => s.memory.iter().copied().map(AxisValue::Memory).collect(),
        SweepAxis::Speed => ratios(&s.speed, &[1, 2]),
        SweepAxis::GdSteps => ratios(&s.gd_steps, &[1, 2]),
    }
}

/// Every `(method, value, config)` point of the sweep, sorted by method and
/// then by axis value.
pub fn sweep_points(cfg: &RunConfig, axis: SweepAxis) -> Result<Vec<(Method, String, RunConfig)>> {
    let methods = if cfg.sweep.methods.is_empty() {
        vec![cfg.learner.method]
    } else {
        cfg.sweep.methods.clone()
    };
    let mut values = axis_values(cfg, axis);
    values.sort_by(|a, b| a.key().total_cmp(&b.key()));
    let mut points = Vec::new();
    for &method in &methods {
        for v in &values {
            let mut c = cfg.clone();
            if method != cfg.learner.method {
                c.learner = LearnerSpec {
                    method,
                    lr: cfg.default_learner(method).lr,
                    ..cfg.learner.clone()
                };
            }
            match v {
                AxisValue::Lr(lr) => {
                    c.learner.lr = *lr;
                    if let Some(f) = cfg.sweep.prefix_fraction {
                        if !(f > 0.0 && f <= 1.0) {
                            return Err(Error::Config(format!(
                                "prefix_fraction {f} outside (0, 1]"
                            )));
                        }
                        c.stream.steps = prefix_steps(cfg.stream.steps, f).max(1);
                    }
                }
                AxisValue::Memory(m) => c.buffer_capacity = *m,
                AxisValue::Ratio(r) if axis == SweepAxis::Speed => c.stream_speed_multiplier = *r,
                AxisValue::Ratio(r) => c.learner.gd_steps_per_job = *r,
            }
            c.validate()?;
            points.push((method, v.label(), c));
        }
    }
    Ok(points)
}

pub fn cmd_sweep(cfg: &RunConfig, axis: SweepAxis, exec: Execution) -> Result<Vec<SweepRow>> {
    let points = sweep_points(cfg, axis)?;
    let configs: Vec<RunConfig> = points.iter().map(|(_, _, c)| c.clone()).collect();
    let grouped = run_all(&configs, exec)?;
    Ok(points
        .into_iter()
        .zip(grouped)
        .map(|((method, value, _), summaries)| SweepRow {
            method,
            axis,
            value,
            results: Aggregate::from_summaries(&summaries),
        })
        .collect())
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<8} {:>10} {:>10} {:>8} {:>10}",
        "method", "value", "mean_acc", "sd", "trained"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<8} {:>10} {:>10.4} {:>8} {:>10.4}",
            r.method.name(),
            r.value,
            r.results.mean_accuracy,
            r.results
                .sd_accuracy
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "-".into()),
            r.results.mean_trained_fraction,
        );
    }
    s
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let err = csv_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record([
        "method",
        "axis",
        "value",
        "seeds",
        "mean_accuracy",
        "sd_accuracy",
        "mean_trained_fraction",
        "mean_raw_flops",
    ])
    .map_err(&err)?;
    for r in rows {
        let axis = match r.axis {
            SweepAxis::Lr => "lr",
            SweepAxis::Memory => "memory",
            SweepAxis::Speed => "speed",
            SweepAxis::GdSteps => "gdsteps",
        };
        w.write_record([
            r.method.name().to_string(),
            axis.to_string(),
            r.value.clone(),
            r.results.seeds.len().to_string(),
            r.results.mean_accuracy.to_string(),
            r.results
                .sd_accuracy
                .map(|v| v.to_string())
                .unwrap_or_default(),
            r.results.mean_trained_fraction.to_string(),
            r.results.mean_raw_flops.to_string(),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(extra: &str) -> RunConfig {
        RunConfig::from_toml_str(&format!(
            "preset = \"small-scale\"\n[stream]\nsteps = 100\n[sweep]\n{extra}"
        ))
        .unwrap()
    }

    #[test]
    fn lr_grid_gives_four_rows_per_method() {
        let c = cfg("methods = [\"er\", \"ace\"]\nprefix_fraction = 0.5");
        let points = sweep_points(&c, SweepAxis::Lr).unwrap();
        assert_eq!(points.len(), 8);
        assert!(points.iter().all(|(_, _, c)| c.stream.steps == 50));
        assert_eq!(points[0].1, "0.001");
    }

    #[test]
    fn speed_two_halves_er_training() {
        let rows = cmd_sweep(&cfg(""), SweepAxis::Speed, Execution::Sequential).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].results.mean_trained_fraction, 1.0);
        assert_eq!(rows[1].results.mean_trained_fraction, 0.5);
        assert!(sweep_table(&rows).contains("ER"));
    }

    #[test]
    fn values_are_sorted() {
        let c = cfg("memory = [400, 50, 100]");
        let labels: Vec<String> = sweep_points(&c, SweepAxis::Memory)
            .unwrap()
            .into_iter()
            .map(|(_, v, _)| v)
            .collect();
        assert_eq!(labels, vec!["50", "100", "400"]);
    }
}

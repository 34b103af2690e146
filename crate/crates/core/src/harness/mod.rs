//! Experiment surface: TOML configs and presets, single runs, matched
//! comparisons, sweeps and plots.

pub mod compare;
pub mod config;
pub mod plot;
pub mod presets;
pub mod run;
pub mod sweep;

use serde::Serialize;

use crate::error::Result;
use crate::par::{map_runs, Execution};
use crate::stats;

pub use compare::{cmd_compare, CompareMode, CompareReport, CompareRow};
pub use config::{ComplexitySource, RunConfig, RunMode, SweepConfig};
pub use plot::{cmd_plot, PlotFormat};
pub use run::{cmd_run, execute, execute_traced, resolve_complexity, RunResult, RunSummary};
pub use sweep::{cmd_sweep, SweepAxis, SweepRow};

/// Per-seed results of one configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub sd_accuracy: Option<f64>,
    pub mean_trained_fraction: f64,
    pub mean_raw_flops: f64,
}

impl Aggregate {
    pub fn from_summaries(summaries: &[RunSummary]) -> Self {
        let accuracies: Vec<f64> = summaries
            .iter()
            .map(|s| s.avg_online_accuracy.unwrap_or(f64::NAN))
            .collect();
        let tf: Vec<f64> = summaries
            .iter()
            .map(|s| s.trained_fraction.unwrap_or(f64::NAN))
            .collect();
        let flops: Vec<f64> = summaries.iter().map(|s| s.raw_flops as f64).collect();
        Aggregate {
            seeds: summaries.iter().map(|s| s.seed).collect(),
            mean_accuracy: stats::mean(&accuracies).unwrap_or(f64::NAN),
            sd_accuracy: stats::std_dev(&accuracies),
            accuracies,
            mean_trained_fraction: stats::mean(&tf).unwrap_or(f64::NAN),
            mean_raw_flops: stats::mean(&flops).unwrap_or(f64::NAN),
        }
    }
}

/// Runs every config for each of its seeds; returns per-config summaries in
/// input order. The first error (in input order) aborts the batch.
pub fn run_all(configs: &[RunConfig], exec: Execution) -> Result<Vec<Vec<RunSummary>>> {
    let jobs: Vec<(usize, RunConfig)> = configs
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.seeds().into_iter().map(move |s| (i, c.with_seed(s))))
        .collect();
    let results = map_runs(jobs, exec, |(i, c)| {
        (i, run::execute(&c).map(|r| r.summary))
    });
    let mut grouped: Vec<Vec<RunSummary>> = vec![Vec::new(); configs.len()];
    for (i, r) in results {
        grouped[i].push(r?);
    }
    Ok(grouped)
}

fn csv_err(path: &std::path::Path) -> impl Fn(csv::Error) -> crate::Error + '_ {
    move |e| crate::Error::io(path, std::io::Error::other(e))
}

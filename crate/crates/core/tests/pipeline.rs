use std::fs;

use rtocl::harness::sweep::sweep_points;
use rtocl::harness::{cmd_plot, cmd_run, execute, PlotFormat, RunConfig, SweepAxis};
use rtocl::metrics::MetricsLog;

fn cfg(extra: &str) -> RunConfig {
    RunConfig::from_toml_str(&format!(
        "preset = \"small-scale\"\n{extra}\n[stream]\nsteps = 300\n"
    ))
    .unwrap()
}

#[test]
fn persisted_log_reads_back_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let result = cmd_run(&cfg("[learner]\nmethod = \"ace\""), &dir.path().join("ace")).unwrap();
    let text = fs::read_to_string(dir.path().join("ace/steps.jsonl")).unwrap();
    let records = MetricsLog::read_jsonl(&text).unwrap();
    assert_eq!(records, result.log.records());
    let last = records.last().unwrap();
    assert_eq!(Some(last.cum_acc), result.summary.avg_online_accuracy);

    let svg = dir.path().join("plot.svg");
    let series = cmd_plot(&[dir.path().join("ace/steps.jsonl")], PlotFormat::Svg, &svg).unwrap();
    assert_eq!(series[0].label, "ace");
    assert!(fs::read_to_string(svg).unwrap().starts_with("<svg"));
}

#[test]
fn saved_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let original = cfg("seed = 11\n[learner]\nmethod = \"rwalk\"");
    let first = cmd_run(&original, dir.path()).unwrap();
    let reloaded = RunConfig::from_path(&dir.path().join("config.toml")).unwrap();
    assert_eq!(reloaded, original);
    assert_eq!(execute(&reloaded).unwrap().summary, first.summary);
}

#[test]
fn seeds_change_the_stream_but_not_the_shape() {
    let a = execute(&cfg("seed = 1")).unwrap();
    let b = execute(&cfg("seed = 2")).unwrap();
    assert_eq!(a.summary.steps, b.summary.steps);
    assert_ne!(a.log.records(), b.log.records());
}

#[test]
fn memory_sweep_sets_capacity() {
    let c = cfg("[sweep]\nmemory = [25, 50]");
    let caps: Vec<usize> = sweep_points(&c, SweepAxis::Memory)
        .unwrap()
        .iter()
        .map(|(_, _, c)| c.buffer_capacity)
        .collect();
    assert_eq!(caps, vec![25, 50]);
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_rtocl");

fn rtocl(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("cfg.toml");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL: &str =
    "preset = \"small-scale\"\n[stream]\nsteps = 200\n[learner]\nmethod = \"mir\"\n";

#[test]
fn run_writes_log_summary_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("run");
    let o = rtocl(&[
        "run",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "4",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let log = fs::read_to_string(out.join("steps.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 200);
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in [
        "t",
        "n",
        "correct",
        "batch_acc",
        "cum_acc",
        "version",
        "trained",
    ] {
        assert!(first.get(key).is_some(), "missing {key}");
    }
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);
    assert!(summary.lines().nth(1).unwrap().contains(",4,"));
    assert!(out.join("config.toml").exists());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        assert!(
            rtocl(&["run", "--config", &cfg, "--out", out.to_str().unwrap()])
                .status
                .success()
        );
    }
    for f in ["steps.jsonl", "summary.csv"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(f)).unwrap(),
            fs::read(dir.path().join("b").join(f)).unwrap()
        );
    }
}

#[test]
fn compare_and_sweep_print_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("repeats = 2\n{SMALL}"));
    let csv = dir.path().join("cmp.csv");
    let o = rtocl(&[
        "--sequential",
        "compare",
        "--config",
        &cfg,
        "--mode",
        "fast",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("ER--(5/2)"), "{text}");
    assert_eq!(fs::read_to_string(csv).unwrap().lines().count(), 4);

    let o = rtocl(&["sweep", "--config", &cfg, "--axis", "speed"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 3);
}

#[test]
fn plot_renders_svg_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let run = dir.path().join("mir");
    assert!(
        rtocl(&["run", "--config", &cfg, "--out", run.to_str().unwrap()])
            .status
            .success()
    );
    let log = run.join("steps.jsonl");
    let svg = dir.path().join("acc.svg");
    let o = rtocl(&[
        "plot",
        log.to_str().unwrap(),
        "--format",
        "svg",
        "--out",
        svg.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(fs::read_to_string(&svg).unwrap().contains("<polyline"));
    let csv = dir.path().join("acc.csv");
    let o = rtocl(&[
        "plot",
        log.to_str().unwrap(),
        "--format",
        "csv",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 201);
}

#[test]
fn usage_and_config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(rtocl(&["run"]).status.code(), Some(2));
    assert_eq!(
        rtocl(&["compare", "--config", "x.toml", "--mode", "medium"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(rtocl(&["plot", "--format", "svg"]).status.code(), Some(2));
    let missing = dir.path().join("missing.toml");
    let out = dir.path().join("o");
    assert_eq!(
        rtocl(&[
            "run",
            "--config",
            missing.to_str().unwrap(),
            "--out",
            out.to_str().unwrap()
        ])
        .status
        .code(),
        Some(2)
    );
    let bad = write_config(
        dir.path(),
        "preset = \"fast-stream\"\nbuffer_capacity = 0\n",
    );
    assert_eq!(
        rtocl(&["run", "--config", &bad, "--out", out.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn divergence_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "preset = \"small-scale\"\ncomplexity = \"table\"\n[stream]\nsteps = 300\n[learner]\nmethod = \"er\"\nlr = 1e6\n",
    );
    let out = dir.path().join("o");
    let o = rtocl(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

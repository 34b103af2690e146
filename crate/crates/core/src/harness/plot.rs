//! Cumulative online accuracy curves from per-step logs, as SVG or CSV.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{MetricsLog, StepRecord};

use super::csv_err;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlotFormat {
    Svg,
    Csv,
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN: f64 = 60.0;
const MAX_POINTS: usize = 1000;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub records: Vec<StepRecord>,
}

/// Curve label: the file stem, or the parent directory name for the
/// default `steps.jsonl` log name.
fn label_for(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    if stem == "steps" {
        if let Some(dir) = path
            .parent()
            .and_then(|p| p.file_name())
            .and_then(|s| s.to_str())
        {
            return dir.to_string();
        }
    }
    stem.to_string()
}

pub fn load_series(paths: &[PathBuf]) -> Result<Vec<Series>> {
    if paths.is_empty() {
        return Err(Error::InvalidArgument(
            "plot needs at least one log file".into(),
        ));
    }
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let records = MetricsLog::read_jsonl(&text)?;
            if records.is_empty() {
                return Err(Error::Empty(format!("{} has no step records", p.display())));
            }
            Ok(Series {
                label: label_for(p),
                records,
            })
        })
        .collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

pub fn render_svg(series: &[Series]) -> String {
    let t_max = series
        .iter()
        .filter_map(|s| s.records.last().map(|r| r.t))
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let x = |t: f64| MARGIN + plot_w * t / t_max;
    let y = |acc: f64| HEIGHT - MARGIN - plot_h * acc;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for i in 0..=5 {
        let acc = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#dddddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{acc:.1}</text>"##,
            MARGIN,
            y(acc),
            WIDTH - MARGIN,
            y(acc),
            MARGIN - 6.0,
            y(acc) + 4.0
        );
    }
    for i in 0..=4 {
        let t = t_max * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x(t),
            HEIGHT - MARGIN + 18.0,
            t.round() as u64
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">stream step</text>"#,
        WIDTH / 2.0,
        HEIGHT - 16.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">average online accuracy</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    for (i, series) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let stride = series.records.len().div_ceil(MAX_POINTS).max(1);
        let mut points: Vec<&StepRecord> = series.records.iter().step_by(stride).collect();
        if points.last().map(|r| r.t) != series.records.last().map(|r| r.t) {
            points.push(series.records.last().expect("non-empty"));
        }
        let coords: Vec<String> = points
            .iter()
            .map(|r| format!("{:.2},{:.2}", x(r.t as f64), y(r.cum_acc)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            coords.join(" ")
        );
        let ly = MARGIN + 16.0 + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            WIDTH - MARGIN - 130.0,
            WIDTH - MARGIN - 110.0,
            WIDTH - MARGIN - 104.0,
            ly + 4.0,
            escape(&series.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn write_series_csv(series: &[Series], path: &Path) -> Result<()> {
    let err = csv_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record([
        "label",
        "t",
        "n",
        "correct",
        "batch_acc",
        "cum_acc",
        "version",
        "trained",
    ])
    .map_err(&err)?;
    for s in series {
        for r in &s.records {
            w.write_record([
                s.label.clone(),
                r.t.to_string(),
                r.n.to_string(),
                r.correct.to_string(),
                r.batch_acc.to_string(),
                r.cum_acc.to_string(),
                r.version.to_string(),
                r.trained.to_string(),
            ])
            .map_err(&err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Renders the logs at `paths` into `out` (SVG curves or long-format CSV).
pub fn cmd_plot(paths: &[PathBuf], format: PlotFormat, out: &Path) -> Result<Vec<Series>> {
    let series = load_series(paths)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    match format {
        PlotFormat::Svg => {
            std::fs::write(out, render_svg(&series)).map_err(|e| Error::io(out, e))?
        }
        PlotFormat::Csv => write_series_csv(&series, out)?,
    }
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(label: &str, n: u64) -> Series {
        let mut log = MetricsLog::default();
        for t in 1..=n {
            log.record_step(t, &[0, 1], &[0, (t % 2) as usize], 0, true)
                .unwrap();
        }
        Series {
            label: label.into(),
            records: log.records().to_vec(),
        }
    }

    #[test]
    fn one_polyline_per_series() {
        let svg = render_svg(&[series("a", 10), series("b<c", 3000), series("d", 1)]);
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert!(svg.contains("b&lt;c"));
        let longest = svg
            .lines()
            .filter(|l| l.starts_with("<polyline"))
            .nth(1)
            .unwrap();
        assert!(longest.matches(',').count() <= MAX_POINTS + 1);
    }

    #[test]
    fn empty_input_is_usage_error() {
        let err = load_series(&[]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn labels_from_paths() {
        assert_eq!(label_for(Path::new("runs/gss/steps.jsonl")), "gss");
        assert_eq!(label_for(Path::new("er.jsonl")), "er");
    }
}

//! `rtocl` command line: single runs, matched comparisons, sweeps and plots.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use rtocl::harness::sweep::{sweep_table, write_sweep_csv};
use rtocl::harness::{
    cmd_compare, cmd_plot, cmd_run, cmd_sweep, CompareMode, PlotFormat, RunConfig, SweepAxis,
};
use rtocl::par::Execution;

#[derive(Parser)]
#[command(
    name = "rtocl",
    version,
    about = "Real-time online continual learning simulator"
)]
struct Cli {
    /// Run seeds one after another instead of on the thread pool.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and write steps.jsonl, summary.csv and config.toml.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare the configured method against its matched replay baselines.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Also write the comparison table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep one axis over the configured grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        axis: AxisArg,
        /// Also write the sweep table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plot accuracy curves from one or more steps.jsonl logs.
    Plot {
        logs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "svg")]
        format: FormatArg,
        /// Output file (defaults to accuracy.svg or accuracy.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Fast,
    Slow,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Lr,
    Memory,
    Speed,
    Gdsteps,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Svg,
    Csv,
}

fn dispatch(cli: Cli) -> rtocl::Result<()> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    match cli.command {
        Command::Run { config, out, seed } => {
            let mut cfg = RunConfig::from_path(&config)?;
            if let Some(s) = seed {
                cfg = cfg.with_seed(s);
            }
            let result = cmd_run(&cfg, &out)?;
            let s = &result.summary;
            println!(
                "{} seed {}: average online accuracy {:.4}, trained fraction {:.4}, k = {}",
                s.method.name(),
                s.seed,
                s.avg_online_accuracy.unwrap_or(f64::NAN),
                s.trained_fraction.unwrap_or(f64::NAN),
                s.effective_k,
            );
            println!("wrote {}", out.display());
        }
        Command::Compare { config, mode, out } => {
            let cfg = RunConfig::from_path(&config)?;
            let mode = match mode {
                ModeArg::Fast => CompareMode::Fast,
                ModeArg::Slow => CompareMode::Slow,
            };
            let report = cmd_compare(&cfg, mode, exec)?;
            println!(
                "complexity {} (scheduled as {} stream steps per job)",
                report.complexity, report.scheduling_cost
            );
            print!("{}", report.to_table());
            if let Some(path) = out {
                report.write_csv(&path)?;
            }
        }
        Command::Sweep { config, axis, out } => {
            let cfg = RunConfig::from_path(&config)?;
            let axis = match axis {
                AxisArg::Lr => SweepAxis::Lr,
                AxisArg::Memory => SweepAxis::Memory,
                AxisArg::Speed => SweepAxis::Speed,
                AxisArg::Gdsteps => SweepAxis::GdSteps,
            };
            let rows = cmd_sweep(&cfg, axis, exec)?;
            print!("{}", sweep_table(&rows));
            if let Some(path) = out {
                write_sweep_csv(&rows, &path)?;
            }
        }
        Command::Plot { logs, format, out } => {
            let (format, default_out) = match format {
                FormatArg::Svg => (PlotFormat::Svg, "accuracy.svg"),
                FormatArg::Csv => (PlotFormat::Csv, "accuracy.csv"),
            };
            let out = out.unwrap_or_else(|| PathBuf::from(default_out));
            let series = cmd_plot(&logs, format, &out)?;
            println!("wrote {} series to {}", series.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

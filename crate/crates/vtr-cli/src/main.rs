//! `vtr`: run teach-and-return scenarios, sweep parameters, inspect graphs.
//!
//! Exit codes: 0 success, 2 safety abort (partial metrics are still
//! written), 3 configuration error.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use vtr_core::graph::io as graph_io;
use vtr_core::harness::{run_scenario, sweep, ExitStatus, SweepParam};
use vtr_core::scenario::Scenario;

#[derive(Parser)]
#[command(name = "vtr", version, about = "Vision-only teach-and-return simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single scenario file.
    Run {
        /// Scenario TOML file.
        scenario: PathBuf,
        /// Output directory for metrics and the taught graph.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a scenario once per value of a swept parameter.
    Sweep {
        /// Base scenario TOML file.
        scenario: PathBuf,
        /// Parameter to sweep: return-speed, return-altitude-offset,
        /// confusion-rate or wind-sigma.
        #[arg(long)]
        param: String,
        /// Comma-separated list of values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Output root; each value gets its own subdirectory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Print a graph file in human-readable form.
    DumpGraph {
        /// Graph file produced by a run.
        graph: PathBuf,
    },
    /// Write the default scenario as a TOML template.
    InitScenario {
        /// Destination file.
        #[arg(default_value = "scenario.toml")]
        path: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(3)
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run { scenario, out } => {
            let scenario = Scenario::load(&scenario)
                .with_context(|| format!("loading scenario {}", scenario.display()))?;
            let outcome = run_scenario(&scenario, &out).context("running scenario")?;
            let summary = outcome.report.summary();
            println!(
                "{}: {} | keyframes {}+{} | localisations {} ({} failed) | \
                 median inliers {:.0} | cross-track median {:.2} m max {:.2} m",
                scenario.name,
                summary.meta.exit,
                summary.meta.teach_keyframes,
                summary.meta.return_keyframes,
                summary.meta.localization_attempts,
                summary.meta.localization_failures,
                summary.localization_inliers.median,
                summary.cross_track_m.median,
                summary.cross_track_m.max,
            );
            println!("metrics written to {}", outcome.out_dir.display());
            Ok(exit_code(&outcome.exit))
        }
        Command::Sweep {
            scenario,
            param,
            values,
            out,
        } => {
            let scenario = Scenario::load(&scenario)
                .with_context(|| format!("loading scenario {}", scenario.display()))?;
            let param: SweepParam = param.parse().map_err(anyhow::Error::msg)?;
            let outcomes = sweep(&scenario, param, &values, &out).context("running sweep")?;
            let mut worst = ExitCode::SUCCESS;
            for (value, outcome) in &outcomes {
                let summary = outcome.report.summary();
                println!(
                    "{}={}: {} | localisations {} ({} failed) | median inliers {:.0}",
                    param.label(),
                    value,
                    summary.meta.exit,
                    summary.meta.localization_attempts,
                    summary.meta.localization_failures,
                    summary.localization_inliers.median,
                );
                if outcome.exit != ExitStatus::Completed {
                    worst = ExitCode::from(2);
                }
            }
            println!("sweep summary written to {}", out.join("sweep_summary.csv").display());
            Ok(worst)
        }
        Command::DumpGraph { graph } => {
            let g = graph_io::load(&graph)
                .with_context(|| format!("loading graph {}", graph.display()))?;
            let mut stdout = std::io::stdout().lock();
            match graph_io::dump_text(&g, &mut stdout) {
                Ok(()) => {}
                // A closed pipe (e.g. piping into `head`) is not an error.
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
                Err(e) => return Err(e.into()),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::InitScenario { path } => {
            let scenario = Scenario::default();
            std::fs::write(&path, scenario.to_toml()?)
                .with_context(|| format!("writing {}", path.display()))?;
            println!("wrote default scenario to {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn exit_code(exit: &ExitStatus) -> ExitCode {
    match exit {
        ExitStatus::Completed => ExitCode::SUCCESS,
        ExitStatus::SafetyAbort(_) | ExitStatus::TimedOut => ExitCode::from(2),
    }
}

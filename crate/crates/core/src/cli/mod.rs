//! The `mfcavi` command line: analyze, run, verify, compare, plot.

pub mod commands;
pub mod config;
pub mod format;
pub mod plot;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{
    cmd_analyze, cmd_compare, cmd_plot, cmd_run, cmd_verify, CheckStatus, CliError, Overrides, RunMeta, RunSummary,
    VerifyReport,
};
pub use config::{load_config, parse_config, ConfigError, Problem, ProblemConfig};

#[derive(Debug, Parser)]
#[command(name = "mfcavi", version, about = "Coordinate ascent variational inference experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print smoothness and convexity constants and update budgets.
    Analyze(Common),
    /// Run trials and write trajectory.csv, summary.json and run_meta.json.
    Run(Common),
    /// Check measured runs against the theoretical rates.
    Verify(Common),
    /// Count updates to epsilon for random and deterministic scans.
    Compare(Common),
    /// Render a trajectory CSV as an SVG plot.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    trials: Option<usize>,
    #[arg(long, value_name = "S")]
    seed: Option<u64>,
    #[arg(long, value_name = "N")]
    updates: Option<u64>,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// Trajectory CSV; defaults to DIR/trajectory.csv.
    #[arg(long, value_name = "PATH")]
    csv: Option<PathBuf>,
    /// Output directory (writes gap.svg) or an .svg file path.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

fn load(common: &Common) -> Result<(Problem, Option<u64>), CliError> {
    let problem = load_config(&common.config)?;
    commands::apply_overrides(
        &problem,
        Overrides {
            trials: common.trials,
            seed: common.seed,
            updates: common.updates,
        },
    )
}

fn plot_paths(args: &PlotArgs) -> Result<(PathBuf, PathBuf), CliError> {
    let is_svg = |p: &PathBuf| p.extension().is_some_and(|e| e == "svg");
    match (&args.csv, &args.out) {
        (None, None) => Err(CliError::Validation("plot needs --csv PATH or --out DIR".into())),
        (Some(csv), None) => Ok((csv.clone(), csv.with_file_name("gap.svg"))),
        (csv, Some(out)) => {
            let svg = if is_svg(out) { out.clone() } else { out.join("gap.svg") };
            let csv = match csv {
                Some(c) => c.clone(),
                None if is_svg(out) => out.with_file_name("trajectory.csv"),
                None => out.join("trajectory.csv"),
            };
            Ok((csv, svg))
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Analyze(c) => {
            let (p, _) = load(&c)?;
            cmd_analyze(&p, c.out.as_deref()).map(|_| ())
        }
        Command::Run(c) => {
            let (p, _) = load(&c)?;
            let out = c
                .out
                .as_deref()
                .ok_or_else(|| CliError::Validation("run needs --out DIR".into()))?;
            let o = cmd_run(&p, out)?;
            println!("wrote {}", o.csv.display());
            println!("wrote {}", o.summary.display());
            println!("wrote {}", o.meta.display());
            for r in &o.run_summary.envelope_checks {
                println!(
                    "{:?} envelope: {} violations over {} points",
                    r.mode,
                    r.violations.len(),
                    r.checked
                );
            }
            Ok(())
        }
        Command::Verify(c) => {
            let (p, _) = load(&c)?;
            let report = cmd_verify(&p, c.out.as_deref())?;
            let failed = report.failed();
            if failed.is_empty() {
                Ok(())
            } else {
                let names: Vec<&str> = failed.iter().map(|r| r.name.as_str()).collect();
                Err(CliError::CheckFailed(names.join(", ")))
            }
        }
        Command::Compare(c) => {
            let (p, seed) = load(&c)?;
            cmd_compare(&p, seed, c.out.as_deref()).map(|_| ())
        }
        Command::Plot(args) => {
            let (csv, svg) = plot_paths(&args)?;
            cmd_plot(&csv, &svg)?;
            println!("wrote {}", svg.display());
            Ok(())
        }
    }
}

/// Parses `args` and runs the command; returns the process exit code
/// (0 success, 1 validation error, 2 runtime or check failure).
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use deadcore::experiment::{self, Analysis, ExperimentConfig, RunOptions};
use deadcore::Error;

/// Reproducible runs for dead-core problems of degenerate fully nonlinear equations.
#[derive(Parser)]
#[command(name = "deadcore", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the configured problem and write the solution.
    Solve(Common),
    /// Residual, viscosity classification and discrete comparison checks.
    Verify(Common),
    /// Growth, non-degeneracy, dyadic decay, density, dimension and flatness.
    Rates(Common),
    /// Closed-form counterexample and barrier checks.
    Oracle(Common),
    /// Run the analyses listed in the config.
    Run(Common),
    /// List every invariant violation of a config without running anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Intervals along the first axis, overriding the config.
    #[arg(long)]
    grid: Option<usize>,
}

const EXIT_CHECKS_FAILED: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_UNREADABLE: u8 = 4;

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_path(&common.config)
        .with_context(|| format!("reading {}", common.config.display()))?;
    if let Some(out) = &common.out {
        cfg.out = Some(out.clone());
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(cells) = common.grid {
        cfg.grid.cells = cells;
    }
    Ok(cfg)
}

fn execute(common: &Common, analyses: Option<Vec<Analysis>>, force_solve: bool) -> Result<ExitCode> {
    let cfg = match load(common) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return Ok(ExitCode::from(EXIT_UNREADABLE));
        }
    };
    if let Some(first) = experiment::validate(&cfg).into_iter().next() {
        eprintln!("invalid config: {first}");
        return Ok(ExitCode::from(EXIT_INVALID));
    }
    let opts = RunOptions {
        analyses,
        force_solve,
    };
    match experiment::run_with(&cfg, &opts) {
        Ok(outcome) => {
            if let Some(report) = &outcome.solve_report {
                println!(
                    "solve: {} sweeps, residual {:.3e}",
                    report.total_sweeps, report.final_residual
                );
            }
            let passed = match &outcome.summary {
                Some(s) => {
                    for c in &s.checks {
                        let tag = if c.passed { "PASS" } else { "FAIL" };
                        println!("{tag} {}/{}: {}", c.analysis.name(), c.name, c.detail);
                    }
                    s.all_passed
                }
                None => true,
            };
            println!("wrote {}", outcome.out_dir.display());
            Ok(ExitCode::from(if passed { 0 } else { EXIT_CHECKS_FAILED }))
        }
        Err(Error::NotConverged { report, .. }) => {
            eprintln!("solver failed:");
            eprintln!("{}", report_text(&report));
            Ok(ExitCode::from(EXIT_SOLVER))
        }
        Err(e @ (Error::Io(_) | Error::Format(_))) => Err(e.into()),
        Err(e) => {
            eprintln!("error: {e}");
            Ok(ExitCode::from(EXIT_INVALID))
        }
    }
}

/// The report with its residual trace cut to the last few sweeps.
fn report_text(report: &deadcore::solver::SolveReport) -> String {
    let mut short = report.clone();
    let keep = short.trace.len().saturating_sub(10);
    short.trace.drain(..keep);
    short.to_json().unwrap_or_else(|e| format!("{short:?} ({e})"))
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Solve(c) => execute(&c, Some(Vec::new()), true),
        Command::Verify(c) => execute(&c, Some(vec![Analysis::OracleResidual, Analysis::Comparison]), false),
        Command::Rates(c) => execute(
            &c,
            Some(vec![
                Analysis::Rates,
                Analysis::Nondegeneracy,
                Analysis::Dyadic,
                Analysis::Density,
                Analysis::Dimension,
                Analysis::Flatness,
            ]),
            false,
        ),
        Command::Oracle(c) => execute(&c, Some(vec![Analysis::Counterexample, Analysis::Barrier]), false),
        Command::Run(c) => execute(&c, None, false),
        Command::Validate { config } => {
            let cfg = match ExperimentConfig::from_path(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("unreadable config {}: {e}", config.display());
                    return Ok(ExitCode::from(EXIT_UNREADABLE));
                }
            };
            let errs = experiment::validate(&cfg);
            if errs.is_empty() {
                println!("ok");
                return Ok(ExitCode::SUCCESS);
            }
            for e in &errs {
                println!("{e}");
            }
            Ok(ExitCode::from(EXIT_INVALID))
        }
    }
}

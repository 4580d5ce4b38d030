//! `gshs`: simulate general stochastic hybrid systems, solve their
//! Fokker-Planck equations on a grid and cross-check the two.

mod commands;
mod config;
mod error;
mod output;
mod solver;
mod verify;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{RunArgs, RunConfig};
use error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "gshs", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo ensemble: summary.json, law.csv, intensity.csv, jump_totals.csv
    Simulate(RunArgs),
    /// Grid solver: solve.json, density.csv, mass.csv and flux.csv for forced jumps
    Solve(RunArgs),
    /// Cross-checks against oracles and the grid solver: verify.json
    Verify(RunArgs),
    /// Ensemble-vs-solver L1 distance per time and mode: compare.csv
    Compare(RunArgs),
}

fn init_workers(workers: Option<usize>) -> CliResult<()> {
    if let Some(n) = workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    Ok(())
}

/// `Ok(false)` when verification ran but failed.
fn run(command: Command) -> CliResult<bool> {
    let args = match &command {
        Command::Simulate(a) | Command::Solve(a) | Command::Verify(a) | Command::Compare(a) => a,
    };
    let config = RunConfig::resolve(args)?;
    init_workers(config.workers)?;
    match command {
        Command::Simulate(_) => commands::run_simulate(config).map(|_| true),
        Command::Solve(_) => commands::run_solve(config).map(|_| true),
        Command::Verify(_) => verify::run_verify(config),
        Command::Compare(_) => commands::run_compare(config).map(|_| true),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

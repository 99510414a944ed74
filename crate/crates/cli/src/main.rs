//! `disorder`: regime classification, value iteration, boundary extraction,
//! path simulation, filtering and policy evaluation for the compound Poisson
//! disorder problem. Every command writes CSV/JSON under `--out`.

mod commands;
mod config;

use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use commands::{BoundaryArgs, EvaluateArgs, FilterArgs, McArgs, SolveArgs};
use config::{exit_code, Common};

#[derive(Debug, Parser)]
#[command(
    name = "disorder",
    version,
    about = "Bayesian quickest detection of a Poisson disorder"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Classify the parameters and report the closed-form geometry.
    Regime,
    /// Run value iteration and write every iterate plus a convergence log.
    Solve(SolveArgs),
    /// Extract the stopping boundary of each solved iterate.
    Boundary(BoundaryArgs),
    /// Simulate observation paths to JSON lines.
    Simulate(McArgs),
    /// Run the filter over simulated paths and export trajectories.
    Filter(FilterArgs),
    /// Estimate Bayes risks of stopping policies on common random numbers.
    Evaluate(EvaluateArgs),
}

fn run(cli: &Cli) -> Result<()> {
    let c = &cli.common;
    match &cli.command {
        Command::Regime => commands::regime(c),
        Command::Solve(a) => commands::solve(c, a),
        Command::Boundary(a) => commands::boundary(c, a),
        Command::Simulate(a) => commands::simulate(c, a),
        Command::Filter(a) => commands::filter(c, a),
        Command::Evaluate(a) => commands::evaluate(c, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

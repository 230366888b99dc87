//! `ems` — batch driver for microgrid battery energy-management experiments:
//! synthetic data preparation, forecaster training, policy training for the
//! with-/without-prediction schemes, evaluation, and the head-to-head
//! comparison.
//!
//! Exit codes: 0 on success, 1 on any error, 2 when training diverged (the
//! last good checkpoint is still written).

mod commands;
mod context;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "ems",
    version,
    about = "Microgrid battery energy-management experiments",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic hourly dataset and write it as CSV.
    Synth(commands::synth::SynthArgs),
    /// Train the per-quantity, per-horizon forecasters and score them on
    /// the held-out split.
    TrainForecaster(commands::train_forecaster::TrainForecasterArgs),
    /// Train a control policy with proximal policy optimization.
    TrainPolicy(commands::train_policy::TrainPolicyArgs),
    /// Roll a trained policy deterministically over held-out episodes.
    Evaluate(commands::evaluate::EvaluateArgs),
    /// Train both schemes across several seeds and compare them.
    Compare(commands::compare::CompareArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => commands::synth::run(args),
        Command::TrainForecaster(args) => commands::train_forecaster::run(args),
        Command::TrainPolicy(args) => commands::train_policy::run(args),
        Command::Evaluate(args) => commands::evaluate::run(args),
        Command::Compare(args) => commands::compare::run(args),
    };
    match result {
        Ok(outcome) if outcome.diverged => {
            eprintln!("warning: training diverged; outputs hold the last good state");
            ExitCode::from(2)
        }
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

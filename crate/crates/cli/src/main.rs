//! `precipnet` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or shape error, 3 training or
//! numerical-check failure.

mod commands;
mod failure;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use failure::Failure;

/// Basin precipitation from gridded atmospheric fields with 2D and 3D CNNs.
#[derive(Debug, Parser)]
#[command(name = "precipnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset with a known field-to-precipitation mapping.
    GenSynthetic(commands::gen::Args),
    /// Train a network with multiple restarts and keep the best on validation.
    Train(commands::train::Args),
    /// Score a trained checkpoint on all three periods.
    Evaluate(commands::evaluate::Args),
    /// Render evaluation reports as one comparison table.
    Compare(commands::compare::Args),
    /// Write per-day observed and predicted precipitation as CSV.
    ExportPredictions(commands::export::Args),
    /// Run the finite-difference gradient checks of every layer.
    Gradcheck(commands::gradcheck::Args),
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenSynthetic(a) => commands::gen::run(a),
        Command::Train(a) => commands::train::run(a),
        Command::Evaluate(a) => commands::evaluate::run(a),
        Command::Compare(a) => commands::compare::run(a),
        Command::ExportPredictions(a) => commands::export::run(a),
        Command::Gradcheck(a) => commands::gradcheck::run(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

//! `dspt`: synthetic data, training runs, gradient audits, verification
//! of the double-softmax loss properties, and parameter sweeps.
//!
//! Exit codes: 0 ok, 2 usage, 3 data format or I/O, 4 numeric abort,
//! 5 verification failure.

mod commands;
mod config;
mod error;
mod output;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{AuditArgs, GenDataArgs, SweepArgs, TrainArgs, VerifyArgs};

#[derive(Parser, Debug)]
#[command(name = "dspt", version, about = "Double-softmax cross-entropy lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic train/test/anchor embeddings (or re-emit a directory)
    GenData(GenDataArgs),
    /// Train the prototype model and write per-epoch metrics
    Train(TrainArgs),
    /// Per-sample logit-gradient norms before any update
    Audit(AuditArgs),
    /// Run the numerical checks and write a JSON report bundle
    Verify(VerifyArgs),
    /// One training run per (noise rate, loss) pair, consolidated into a CSV
    Sweep(SweepArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train_cmd(a),
        Command::Audit(a) => commands::audit(a),
        Command::Verify(a) => commands::verify(a),
        Command::Sweep(a) => commands::sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}

//! `sescan`: dataset generation, fold splitting, deduplication, training,
//! inference and evaluation.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 runtime failure
//! (including training divergence).

mod common;
mod dedup;
mod eval;
mod generate;
mod infer;
mod split;
mod train;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "sescan", version, about = "Sexually-explicit content classification toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic proxy dataset (manifest + PNG images).
    Generate(generate::GenerateArgs),
    /// Assign manifest records to stratified folds.
    Split(split::SplitArgs),
    /// Drop near-duplicate images by embedding distance.
    Dedup(dedup::DedupArgs),
    /// Train the reference network through the configured stages.
    Train(train::TrainArgs),
    /// Run an inference strategy over a manifest.
    Infer(infer::InferArgs),
    /// Score inference results against a manifest.
    Eval(eval::EvalArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => generate::run(a),
        Command::Split(a) => split::run(a),
        Command::Dedup(a) => dedup::run(a),
        Command::Train(a) => train::run(a),
        Command::Infer(a) => infer::run(a),
        Command::Eval(a) => eval::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sescan: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

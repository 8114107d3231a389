//! `proxyforge`: synthetic data, training, evaluation, mining and manifest
//! cleaning from the command line.
//!
//! Every subcommand takes an optional `--config` JSON document; flags
//! override its fields. Exit codes: 0 success, 1 validation error, 2 runtime
//! error.

mod clean;
mod common;
mod eval;
mod mine;
mod synth;
mod train;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "proxyforge", version, about = "Proxy-based metric learning experiments")]
#[command(after_help = "Seeds not given by flag or config fall back to PROXYFORGE_SEED.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled feature set with manifest metadata
    Synth(synth::Args),
    /// Train an embedder and proxies
    Train(train::Args),
    /// Compute recall@1 partitions and NMI for a checkpoint
    Eval(eval::Args),
    /// Build a hard-negative map from retrieval predictions
    Mine(mine::Args),
    /// Normalize, merge, deduplicate and filter manifests
    Clean(clean::CleanArgs),
    /// Assign classes to train/val/test
    Split(clean::SplitArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version go to stdout and succeed.
            let code = u8::from(e.use_stderr());
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth::run(a),
        Command::Train(a) => train::run(a),
        Command::Eval(a) => eval::run(a),
        Command::Mine(a) => mine::run(a),
        Command::Clean(a) => clean::run_clean(a),
        Command::Split(a) => clean::run_split(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(common::exit_code(&e))
        }
    }
}

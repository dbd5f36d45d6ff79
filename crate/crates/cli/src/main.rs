//! `streampoint` — operator surface for the streaming 3D perception stack.
//!
//! Subcommands: `gen` (synthetic sequences), `train` (curriculum training),
//! `infer` (per-frame predictions + merged cloud), `query` (raymap readout
//! of an unseen viewpoint), `revisit` (frozen-state re-processing), `eval`
//! (depth/pose/recon reports), `selftest` (invariant suites).
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric
//! fault.

mod commands;
mod config;
mod errors;
mod manifest;

use clap::{Parser, Subcommand};

use errors::AppError;

#[derive(Parser)]
#[command(name = "streampoint", version, about = "streaming 3D perception toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate annotated synthetic sequences from a seed range.
    Gen(commands::gen::GenArgs),
    /// Train with the staged curriculum.
    Train(commands::train::TrainArgs),
    /// Run a checkpoint over a sequence, writing predictions and a cloud.
    Infer(commands::infer::InferArgs),
    /// Query a held-out viewpoint through the state (raymap readout).
    Query(commands::query::QueryArgs),
    /// Re-process a sequence against its frozen final state.
    Revisit(commands::revisit::RevisitArgs),
    /// Evaluate a checkpoint with one of the metric protocols.
    Eval(commands::eval::EvalArgs),
    /// Run the built-in invariant suites.
    Selftest(commands::selftest::SelftestArgs),
}

fn configure_threads() -> Result<(), AppError> {
    if let Ok(v) = std::env::var("STREAMPOINT_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| AppError::Usage(format!("STREAMPOINT_THREADS={v} is not a number")))?;
        if n > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| AppError::Usage(format!("thread pool: {e}")))?;
        }
    }
    Ok(())
}

fn run() -> Result<(), AppError> {
    configure_threads()?;
    let cli = Cli::try_parse().map_err(|e| {
        // clap's own exit code conventions differ; usage problems are 1 here.
        if e.use_stderr() {
            AppError::Usage(e.to_string())
        } else {
            // --help/--version: print and succeed.
            print!("{e}");
            AppError::Clean
        }
    })?;
    match cli.cmd {
        Cmd::Gen(a) => commands::gen::run(a),
        Cmd::Train(a) => commands::train::run(a),
        Cmd::Infer(a) => commands::infer::run(a),
        Cmd::Query(a) => commands::query::run(a),
        Cmd::Revisit(a) => commands::revisit::run(a),
        Cmd::Eval(a) => commands::eval::run(a),
        Cmd::Selftest(a) => commands::selftest::run(a),
    }
}

fn main() {
    match run() {
        Ok(()) => {}
        Err(AppError::Clean) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.code());
        }
    }
}

//! `tokenbound`: certify token-level generalization bounds from risk traces
//! and run the desk-scale training pipelines that produce them.
//!
//! Exit codes: 0 success, 1 internal failure, 2 bad input, 3 a reported
//! bound is vacuous and `--require-nonvacuous` was given.

mod certify;
mod commands;
mod config;
mod summary;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::*;
use config::BadInput;

#[derive(Debug, Parser)]
#[command(
    name = "tokenbound",
    version,
    about = "Token-level generalization bounds for sequence models"
)]
struct Cli {
    /// Exit with status 3 when any reported bound is vacuous.
    #[arg(long, global = true)]
    require_nonvacuous: bool,
    #[command(flatten)]
    run: RunArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Certify BPD and top-k bounds for a risk trace.
    EvalBound(EvalBoundArgs),
    /// Fit a per-token smoothing plan and compare it with the global grid.
    OptimizeAlpha(OptimizeAlphaArgs),
    /// Train a sparse order-k Markov chain, code it and certify it.
    TrainMarkov(TrainMarkovArgs),
    /// Train the toy next-token model, quantize, code and certify it.
    TrainToy(TrainToyArgs),
    /// Measure the coded size of a checkpoint.
    Compress(CompressArgs),
    /// Write a seeded synthetic token corpus.
    GenCorpus(GenCorpusArgs),
    /// Write the structured and random integer-sequence datasets.
    GenSequences(SequenceArgs),
    /// Training accuracy of structured vs random sequences under quantization.
    Memorization(MemorizationArgs),
    /// Aggregate finished runs into Markdown and CSV tables.
    Report(ReportArgs),
    /// Rewrite a trace in text or binary form.
    ConvertTrace(ConvertTraceArgs),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let bad = err.chain().any(|c| {
        c.is::<BadInput>()
            || c.is::<tokenbound_core::Error>()
            || c.is::<serde_json::Error>()
            || c.is::<toml::de::Error>()
    });
    if bad {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::EvalBound(a) => eval_bound(a, &cli.run),
        Command::OptimizeAlpha(a) => optimize_alpha(a, &cli.run),
        Command::TrainMarkov(a) => train_markov(a, &cli.run),
        Command::TrainToy(a) => train_toy(a, &cli.run),
        Command::Compress(a) => compress(a, &cli.run),
        Command::GenCorpus(a) => gen_corpus(a, &cli.run),
        Command::GenSequences(a) => gen_sequences(a, &cli.run),
        Command::Memorization(a) => memorization(a, &cli.run),
        Command::Report(a) => report(a),
        Command::ConvertTrace(a) => convert_trace(a),
    };
    match result {
        Ok(out) if cli.require_nonvacuous && out.vacuous == Some(true) => {
            eprintln!("error: a reported bound is vacuous");
            ExitCode::from(3)
        }
        Ok(_) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

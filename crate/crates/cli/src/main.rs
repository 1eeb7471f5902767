//! Command-line front end for treed Gaussian process regression:
//! synthetic data generation, posterior sampling, prediction, timing, and
//! a built-in self-check.

use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod bench;
mod check;
mod data;
mod fit;
mod predict;
mod synth;

#[derive(Parser)]
#[command(
    name = "treegp",
    version,
    about = "Scalable Bayesian multivariate spatial regression on treed graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

// Built once at startup; the size spread between argument structs is fine.
#[allow(clippy::large_enum_variant)]
#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with ground truth.
    Synth(synth::SynthArgs),
    /// Sample the posterior and write a fit bundle.
    Fit(fit::FitArgs),
    /// Predict at new or held-out locations from a fit bundle.
    Predict(predict::PredictArgs),
    /// Time sweeps across dataset sizes.
    Bench(bench::BenchArgs),
    /// Verify the implementation against exact small-scale references.
    Check(check::CheckArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(args) => synth::run(args),
        Command::Fit(args) => fit::run(args),
        Command::Predict(args) => predict::run(args),
        Command::Bench(args) => bench::run(args),
        Command::Check(args) => check::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

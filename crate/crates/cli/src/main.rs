//! `bayema` — Bayesian modal identification from multi-setup forced-vibration
//! tests: MAP natural frequencies, damping ratios, mode shapes and modal
//! participation factors with posterior uncertainties.
//!
//! Exit codes: 0 success, 2 validation failure, 3 non-convergence (a report
//! is still written), 4 numeric failure.

mod bands;
mod dataset;
mod error;
mod identify;
mod plots;
mod report;
mod synthesize;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bayema", version, about = "Bayesian modal identification from forced-vibration tests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Identify modal parameters and uncertainties from a measured campaign.
    Identify(identify::IdentifyArgs),
    /// Generate a synthetic campaign with known ground truth.
    Synthesize(synthesize::SynthesizeArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Identify(args) => identify::run(&args),
        Command::Synthesize(args) => synthesize::run(&args),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}

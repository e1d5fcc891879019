//! `probebench` command-line entry point.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use probebench::ErrorKind;

/// Environment variable that replaces the configured features root.
pub const FEATURES_ENV: &str = "PROBEBENCH_FEATURES";
/// Environment variable naming the feature extraction program.
pub const EXTRACTOR_ENV: &str = "PROBEBENCH_EXTRACTOR";

#[derive(Debug, Parser)]
#[command(
    name = "probebench",
    version,
    about = "Layer-wise probing of frozen speech features"
)]
struct Cli {
    /// Worker threads for training (default: logical cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Seed for splitting, synthesis, and the gradient suite.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a speaker-independent train/dev/test split for a manifest.
    Split(SplitArgs),
    /// Run layer sweeps (and optionally aggregation) from a config file.
    Probe(ProbeArgs),
    /// Write a synthetic planted-layer dataset.
    Synth(SynthArgs),
    /// Finite-difference check of every head's gradients.
    Gradcheck(GradcheckArgs),
    /// Dump features for a catalog model with the external extractor.
    Extract(ExtractArgs),
    /// Re-render report files from a saved benchmark.json.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Train, dev, and test shares, comma-separated.
    #[arg(long, default_value = "0.6,0.2,0.2")]
    pub ratios: String,
    /// Split file to write (default: <out>/<dataset>.split).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Print the number of training tasks and exit.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value = "planted")]
    pub dataset: String,
    #[arg(long, default_value = "synthetic")]
    pub model: String,
    #[arg(long, default_value_t = 13)]
    pub layers: usize,
    #[arg(long, default_value_t = 10)]
    pub time_steps: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 10)]
    pub speakers: usize,
    #[arg(long, default_value_t = 40)]
    pub per_class: usize,
    #[arg(long, default_value_t = 6)]
    pub planted_layer: usize,
    #[arg(long, default_value_t = 3.0)]
    pub snr: f64,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    /// Scale one analytic gradient coordinate by this factor (test hook).
    #[arg(long, hide = true)]
    pub plant_bug: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Features root (default: $PROBEBENCH_FEATURES, else <out>/features).
    #[arg(long)]
    pub features_root: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// A benchmark.json written by `probe`.
    #[arg(long)]
    pub input: PathBuf,
}

/// Global flags shared by every command.
pub struct Globals {
    pub workers: Option<usize>,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Validation => 1,
        ErrorKind::Io => 2,
        ErrorKind::Internal => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let globals = Globals {
        workers: cli.workers,
        seed: cli.seed,
        out: cli.out,
    };
    let result = match cli.command {
        Command::Split(a) => commands::split(&globals, a),
        Command::Probe(a) => commands::probe(&globals, a),
        Command::Synth(a) => commands::synth(&globals, a),
        Command::Gradcheck(a) => commands::gradcheck(&globals, a),
        Command::Extract(a) => commands::extract(&globals, a),
        Command::Report(a) => commands::report(&globals, a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}

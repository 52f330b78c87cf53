//! `vasb`: corpus generation, training, evaluation and sweeps.
//!
//! Failures exit with status 1 and print one JSON record on stderr:
//! `{"error": "<kind>", "message": "<text>"}`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod sweep;

use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "vasb", version, about = "Dropout bottleneck auto-encoder experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the top-level seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the training and evaluation corpora.
    Gen(Common),
    /// Train a model on the generated corpus.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the run's checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate the trained checkpoint.
    Eval(Common),
    /// Run every cell of the configured grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Concurrent cells; defaults to `sweep.workers`.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Compare evaluation reports side by side.
    Report {
        /// `report.toml` files.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Write the table here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn load(common: &Common) -> vasb::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.output {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> vasb::Result<()> {
    match cli.command {
        Command::Gen(c) => commands::cmd_gen(&load(&c)?),
        Command::Train { common, resume } => commands::cmd_train(&load(&common)?, resume),
        Command::Eval(c) => commands::cmd_eval(&load(&c)?),
        Command::Sweep { common, workers } => {
            let cfg = load(&common)?;
            let workers = workers.unwrap_or(cfg.sweep.workers);
            if workers == 0 {
                return Err(vasb::Error::Config("--workers: must be at least 1".into()));
            }
            sweep::cmd_sweep(&cfg, workers).map(|p| println!("{}", p.display()))
        }
        Command::Report { reports, output } => commands::cmd_report(&reports, output.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}

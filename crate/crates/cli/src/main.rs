//! Command-line driver: parses arguments, loads the config, configures
//! logging and the thread pool, then dispatches to one pipeline command.
//! Exit codes: 0 on success, 1 when the statistics could not be computed
//! from the data, 2 for input and configuration problems.

mod commands;
mod config;
mod emit;
mod synth;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flipaudit_core::{Error, ErrorCategory, Result};

use crate::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "flipaudit",
    version,
    about = "Audit binary misclassifications, identify them from clinical context, \
             and selectively flip the riskiest predictions"
)]
struct Cli {
    /// Run configuration file (TOML).
    #[arg(long, global = true, default_value = "flipaudit.toml")]
    config: PathBuf,
    /// Override the config's run.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the config's run.out_dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with planted misclassification signals.
    Synth,
    /// Fit per-model logistic audits of misclassification predictors.
    Audit,
    /// Evaluate misclassification identifiers over repeated splits.
    Identify,
    /// Search for a selective prediction flip and score it held-out.
    Flip,
    /// Summarize the other commands' reports into summary.md and plot data.
    Report,
}

/// Honor FLIPAUDIT_THREADS as a cap on parallelism; unset means rayon's
/// default (one thread per core).
fn init_thread_pool() -> Result<()> {
    let Ok(value) = std::env::var("FLIPAUDIT_THREADS") else {
        return Ok(());
    };
    let threads: usize = value.trim().parse().map_err(|_| {
        Error::invalid(format!(
            "FLIPAUDIT_THREADS must be a positive integer, got '{value}'"
        ))
    })?;
    if threads == 0 {
        return Err(Error::invalid(
            "FLIPAUDIT_THREADS must be a positive integer, got '0'",
        ));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::invalid(format!("could not configure the thread pool: {e}")))
}

fn run(cli: &Cli) -> Result<()> {
    init_thread_pool()?;
    let mut config = RunConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.run.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.run.out_dir = out.clone();
    }
    match cli.command {
        Command::Synth => commands::cmd_synth(&config),
        Command::Audit => commands::cmd_audit(&config),
        Command::Identify => commands::cmd_identify(&config),
        Command::Flip => commands::cmd_flip(&config),
        Command::Report => commands::cmd_report(&config),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err.category() {
                ErrorCategory::Computation => ExitCode::from(1),
                ErrorCategory::Input => ExitCode::from(2),
            }
        }
    }
}

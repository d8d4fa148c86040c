//! Command-line entry point. Exit codes: 0 success, 1 usage/config error,
//! 2 data error, 3 internal error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use beamgat::commands;
use beamgat::config::RunConfig;
use beamgat::Error;

#[derive(Parser)]
#[command(
    name = "beamgat",
    version,
    about = "Simulate vertical beam dropout on LiDAR point clouds and reconstruct the missing elevations with a graph attention network"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArg {
    /// Run configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
}

#[derive(clap::Args)]
struct ModelArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Model checkpoint; defaults to `<output.dir>/model.bgat`.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark frames.
    Synth(ConfigArg),
    /// Apply channel dropout to frames, writing masked clouds + truth sidecars.
    Dropout(ConfigArg),
    /// Train the attention model on masked frames.
    Train(ConfigArg),
    /// Reconstruct masked frames without scoring.
    Reconstruct(ModelArgs),
    /// Reconstruct and score masked frames; writes metrics and CDF tables.
    Eval(ModelArgs),
    /// Evaluate across neighborhood sizes, timing graph+inference per frame.
    #[command(name = "sweep-k")]
    SweepK(ModelArgs),
    /// Print the resolved configuration and available inputs.
    Info(ConfigArg),
}

fn run() -> Result<(), Error> {
    let cli = Cli::try_parse().map_err(|e| {
        // clap prints its own message; route help/version to stdout untouched
        if e.kind() == clap::error::ErrorKind::DisplayHelp
            || e.kind() == clap::error::ErrorKind::DisplayVersion
        {
            let _ = e.print();
            std::process::exit(0);
        }
        Error::Config(e.to_string())
    })?;
    match cli.command {
        Command::Synth(a) => {
            commands::cmd_synth(&RunConfig::load(&a.config)?)?;
        }
        Command::Dropout(a) => {
            commands::cmd_dropout(&RunConfig::load(&a.config)?)?;
        }
        Command::Train(a) => {
            commands::cmd_train(&RunConfig::load(&a.config)?)?;
        }
        Command::Reconstruct(a) => {
            commands::cmd_reconstruct(&RunConfig::load(&a.config.config)?, a.model.as_deref())?;
        }
        Command::Eval(a) => {
            commands::cmd_eval(&RunConfig::load(&a.config.config)?, a.model.as_deref())?;
        }
        Command::SweepK(a) => {
            commands::cmd_sweep_k(&RunConfig::load(&a.config.config)?, a.model.as_deref())?;
        }
        Command::Info(a) => {
            commands::cmd_info(&RunConfig::load(&a.config)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

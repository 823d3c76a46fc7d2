//! `collusion-lab` command-line front-end.
//!
//! Exit codes: 0 success, 1 negative result (no deviation found, a
//! certificate or example check failed), 2 configuration error, 3 node
//! budget exhausted.

mod commands;
mod config;
mod examples;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{CliError, Flags};

#[derive(Parser, Debug)]
#[command(name = "collusion-lab", version, about = "Collusion thresholds and deviation search for peer prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Ex-ante and interim coalition thresholds for one setting
    Thresholds,
    /// Recompute the worked example numbers
    VerifyExamples,
    /// Search for a profitable coalition deviation from truth-telling
    Falsify,
    /// Monte Carlo estimate of every role's utility
    Simulate,
    /// Threshold table over a sweep of n, Pr(h) or Pr(h|h)
    Scan,
    /// Equilibrium checks on an explicit game
    GameCheck {
        /// JSON file with `game` and `profile`
        #[arg(long)]
        game: PathBuf,
        /// Verify this certificate instead of searching
        #[arg(long)]
        certificate: Option<PathBuf>,
    },
}

/// Process outcome mapped to the documented exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    NotFound,
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("COLLUSION_LAB_THREADS") else { return Ok(()) };
    let threads: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|t| *t >= 1)
        .ok_or_else(|| config::config_err(format!("COLLUSION_LAB_THREADS must be a positive integer, got {v:?}")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| config::config_err(e.to_string()))?;
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(())
}

fn run(cli: &Cli) -> Result<Status, CliError> {
    init_threads()?;
    let cfg = config::RunConfig::resolve(&cli.flags)?;
    match &cli.command {
        Command::Thresholds => commands::thresholds(&cfg),
        Command::VerifyExamples => examples::verify(&cfg),
        Command::Falsify => commands::falsify(&cfg),
        Command::Simulate => commands::simulate(&cfg),
        Command::Scan => commands::scan(&cfg),
        Command::GameCheck { game, certificate } => commands::game_check(&cfg, game, certificate.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::NotFound) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(match e {
                CliError::Config(_) => 2,
                CliError::Budget(_) => 3,
            })
        }
    }
}

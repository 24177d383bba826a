//! Command-line front end: configuration loading and the four experiment
//! subcommands.
//!
//! A run starts from the `desk` or `paper` profile, overlays the TOML file
//! given with `--config`, then applies `--seed` and `--out`. Every CSV it
//! writes starts with one `#` line holding the config hash and the seed.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{load_config, parse_config, ExperimentConfig, Profile, ResourceBudget};

use crate::error::Result;

#[derive(Debug, Parser)]
#[command(
    name = "fskmv",
    version,
    about = "FSK majority-vote over-the-air learning simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML file overriding the profile defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Built-in parameter set.
    #[arg(long, global = true, value_enum, default_value_t = Profile::Desk)]
    pub profile: Profile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// λ, flip-probability and convergence-bound tables.
    Analyze,
    /// Analytic against simulated detector flip probabilities.
    Detector,
    /// Federated training with the configured aggregation scheme.
    Train,
    /// PMEPR distribution of the transmit symbols.
    Pmepr,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Analyze => "analyze",
            Command::Detector => "detector",
            Command::Train => "train",
            Command::Pmepr => "pmepr",
        }
    }
}

/// Resolve the configuration from the parsed arguments.
pub fn resolve(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => load_config(p, cli.profile)?,
        None => parse_config("", cli.profile)?,
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

/// Run the selected subcommand and return the files written.
pub fn execute(cli: &Cli) -> Result<Vec<PathBuf>> {
    let cfg = resolve(cli)?;
    commands::run(cli.command.name(), &cfg)
}

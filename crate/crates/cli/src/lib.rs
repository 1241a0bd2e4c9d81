//! Command-line front end: configuration, data ingestion and the `fit`,
//! `profile`, `lrtest`, `simulate` and `empirical` commands.

pub mod commands;
pub mod config;
pub mod error;
pub mod ingest;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use config::RunConfig;
use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "bolm", version, about = "Penalized bivariate ordered logistic models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one model and write a report and its log-GOR surface.
    Fit(CommonArgs),
    /// AIC over a grid of difference orders and smoothing values.
    Profile {
        #[command(flatten)]
        common: CommonArgs,
        /// Base of the configured log smoothing grid.
        #[arg(long)]
        log_base: Option<f64>,
    },
    /// Penalized likelihood-ratio test of two nested models.
    Lrtest(CommonArgs),
    /// Run a configured simulation experiment.
    Simulate(CommonArgs),
    /// Empirical log global odds ratios of the pooled table.
    Empirical(CommonArgs),
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Fit(c) | Command::Lrtest(c) | Command::Simulate(c) | Command::Empirical(c) => c,
            Command::Profile { common, .. } => common,
        }
    }
}

/// Runs a parsed command and returns the text for stdout.
pub fn run(cli: &Cli) -> CliResult<String> {
    let common = cli.command.common();
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = commands::output_dir(&cfg, common.out.as_deref());
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = common.threads {
        if t == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| CliError::Config(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Fit(_) => commands::fit_command(&cfg, &out),
        Command::Profile { log_base, .. } => commands::profile(&cfg, &out, *log_base),
        Command::Lrtest(_) => commands::lrtest(&cfg, &out),
        Command::Simulate(_) => commands::simulate(&cfg, &out),
        Command::Empirical(_) => commands::empirical(&cfg, &out),
    })
}

//! The `cfgdp` pipeline: dataset generation, training, evaluation, entropy
//! curves and the λ_max sweep, each writing CSV artifacts to one output
//! directory.

pub mod config;
pub mod commands;

pub use commands::{
    cmd_entropy, cmd_eval, cmd_gen_data, cmd_sweep, cmd_train, Context, DataSummary,
    EntropyReport, EvalReport, TrainSummary, CKPT_CFG, CKPT_NOSTEP, EFFECTIVE_CONFIG,
};

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::config::{Profile, RunConfig, DEFAULT_OUT, OUT_ENV};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Data(#[from] cfgdp::dataset::DatasetError),
    #[error(transparent)]
    Checkpoint(#[from] cfgdp::trainer::CheckpointError),
    #[error(transparent)]
    Report(#[from] cfgdp::evalsuite::ReportError),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numeric(_) => EXIT_NUMERIC,
            _ => EXIT_USAGE,
        }
    }
}

#[derive(Debug, Clone, Parser)]
#[command(name = "cfgdp", version, about = "Diffusion policy with step-count guidance")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON config overlaid on the profile defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; falls back to the config, then $CFGDP_OUT.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Comma-separated variant names.
    #[arg(long, global = true)]
    pub variant: Option<String>,
    /// Demonstrations for gen-data, rollouts for eval.
    #[arg(long, global = true)]
    pub n: Option<usize>,
    #[arg(long, global = true, value_enum, default_value = "desk")]
    pub profile: Profile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate expert demonstrations and the train/validation split.
    GenData,
    /// Train the guided and the step-free checkpoints.
    Train,
    /// Paired-seed rollouts; writes metrics.csv and termination.csv.
    Eval,
    /// Conditional entropy along a held-out probe; writes entropy.csv.
    Entropy,
    /// λ_max sweep on validation chunks; writes sweep.csv.
    Sweep,
}

/// Profile defaults, then the config file, then command-line flags.
pub fn resolve(cli: &Cli) -> Result<Context, CliError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path, cli.profile)?,
        None => RunConfig::for_profile(cli.profile),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        config.jobs = Some(jobs);
    }
    if let Some(n) = cli.n {
        match cli.command {
            Command::GenData => config.data.n_demos = n,
            Command::Eval => config.eval.n = n,
            _ => {}
        }
    }
    if let Some(list) = &cli.variant {
        let names: Vec<String> = list.split(',').map(|s| s.trim().to_string()).collect();
        match cli.command {
            Command::Entropy => config.entropy.variants = names,
            _ => config.eval.variants = names,
        }
    }
    let out = cli
        .out
        .clone()
        .or_else(|| config.out_dir.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    config.out_dir = Some(out.clone());
    config.validate()?;
    Ok(Context { config, out })
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let ctx = resolve(cli)?;
    match cli.command {
        Command::GenData => cmd_gen_data(&ctx).map(|_| ()),
        Command::Train => cmd_train(&ctx).map(|_| ()),
        Command::Eval => cmd_eval(&ctx).map(|_| ()),
        Command::Entropy => cmd_entropy(&ctx).map(|_| ()),
        Command::Sweep => cmd_sweep(&ctx).map(|_| ()),
    }
}

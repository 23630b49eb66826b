use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use traj2user_core::synth::DEFAULT_DECAY_RATE;
use traj2user_core::{CompressionFactor, MethodKind};

mod commands;
mod manifest;

#[derive(Debug, Parser)]
#[command(
    name = "traj2user",
    version,
    about = "User embeddings from semantic trajectories"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic segment corpus.
    Synth(SynthArgs),
    /// Build user embeddings from a segment corpus.
    Embed(EmbedArgs),
    /// Run the virtual-pair MRR experiment.
    EvalMrr(EvalMrrArgs),
    /// Run the planted-group similarity experiment.
    EvalGroups(EvalGroupsArgs),
    /// Re-run the command recorded in a manifest.
    #[serde(skip)]
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct CommonArgs {
    /// Label schema (TOML). Defaults to the bundled TagMyDay schema.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Training epochs (traj2user).
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: u64,
    /// SGD learning rate (traj2user).
    #[arg(long, default_value_t = 0.025)]
    pub lr: f64,
    /// Half-width of the uniform weight initialization (traj2user).
    #[arg(long, default_value_t = 0.01)]
    pub init_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct MethodArgs {
    /// sum, ppmi, sm, svd-ppmi, svd-sm or traj2user.
    #[arg(long)]
    pub method: MethodKind,
    /// Compression factor f; embedding length is |d| / f.
    #[arg(long, default_value = "1")]
    pub factor: CompressionFactor,
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 157, value_parser = clap::value_parser!(u64).range(1..))]
    pub users: u64,
    #[arg(long, default_value_t = 727)]
    pub max_segments: usize,
    #[arg(long, default_value_t = 1)]
    pub min_segments: usize,
    #[arg(long, default_value_t = DEFAULT_DECAY_RATE)]
    pub decay_rate: f64,
    /// Dirichlet concentration of per-user label preferences.
    #[arg(long, default_value_t = 0.5)]
    pub concentration: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EmbedArgs {
    /// Segment CSV.
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub method: MethodArgs,
    /// Also save the trained network (traj2user only).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EvalMrrArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub method: MethodArgs,
    /// Number of virtual test pairs.
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    pub pairs: u64,
    /// Pairs evaluated concurrently. Does not change the output.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EvalGroupsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    pub groups: u64,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub group_size: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub method: MethodArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    pub manifest: PathBuf,
    /// Write outputs here instead of the recorded path.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

/// Errors that are the caller's fault; they exit with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

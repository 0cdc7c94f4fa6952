use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "pani", version, about = "Noisy-action MDPs and penalized action-noise injection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a toy dataset as JSONL.
    GenData(GenDataArgs),
    /// Build and solve the NAMDP of a dataset; export R_sigma, Q* and the mode count.
    Namdp(NamdpArgs),
    /// Run a numerical verification suite.
    Verify(VerifyArgs),
    /// Train TD3-AN or IQL-AN on a dataset.
    Train(TrainArgs),
    /// Evaluate a saved agent.
    Eval(EvalArgs),
    /// Run a grid of training runs and summarize them.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DataKind {
    Bandit1d,
    Rings,
    Pinwheel,
    Chain,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(value_enum)]
    pub kind: DataKind,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the generator seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// TOML file with `[rings]`, `[pinwheel]` or `[chain]` parameters.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NamdpArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long, conflicts_with_all = ["log_sigma", "variance"])]
    pub sigma: Option<f64>,
    #[arg(long, allow_hyphen_values = true, conflicts_with = "variance")]
    pub log_sigma: Option<f64>,
    /// Per-coordinate variance of the Gaussian or Laplace kernel.
    #[arg(long)]
    pub variance: Option<f64>,
    /// Use the sigma -> 0 nearest-action model instead of a noise kernel.
    #[arg(long)]
    pub limit: bool,
    /// Grid points per action dimension.
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// TOML file with `gamma`, `[noise]` and `[grid]` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// theorem1, limits, bound, noood or all.
    pub suite: String,
    /// Random MDP instances for the bound suite.
    #[arg(long, default_value_t = 100)]
    pub seeds: u64,
    /// Replaces each suite's headline tolerance.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// JSON report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Training flags; each overrides the matching key of the `[train]` config section.
#[derive(Debug, Args, Default, Clone)]
pub struct TrainOverrides {
    #[arg(long)]
    pub algorithm: Option<String>,
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub log_sigma: Option<f64>,
    /// Train critics at dataset actions (sigma -> 0).
    #[arg(long)]
    pub no_noise: bool,
    #[arg(long)]
    pub penalty_coef: Option<f64>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub hidden_layers: Option<usize>,
    #[arg(long)]
    pub bc_alpha: Option<f64>,
    #[arg(long)]
    pub stochastic_actor: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub log_interval: Option<u64>,
    #[arg(long)]
    pub eval_episodes: Option<usize>,
    #[arg(long)]
    pub ood_samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for metrics.csv, agent.txt and config.toml.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with a `[train]` section.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalWhat {
    Ood,
    Landscape,
    Return,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(value_enum)]
    pub what: EvalWhat,
    #[arg(long)]
    pub agent: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Monte Carlo samples for `ood`.
    #[arg(long, default_value_t = 200_000)]
    pub samples: usize,
    /// Rollouts for `return`.
    #[arg(long, default_value_t = 10)]
    pub episodes: usize,
    /// Grid points per action dimension for `landscape`.
    #[arg(long, default_value_t = 101)]
    pub grid: usize,
    /// Comma-separated state for `landscape`; defaults to the first dataset state.
    #[arg(long, allow_hyphen_values = true)]
    pub state: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// TOML file with `[sweep]` and optional `[train]` sections.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Concurrent runs; defaults to the number of logical cores.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Skip runs whose directory already holds a finished result.
    #[arg(long)]
    pub resume: bool,
}

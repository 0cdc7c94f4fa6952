//! Penalized action-noise injection for deep offline RL.
//!
//! TD3-AN and IQL-AN train twin critics at noised actions `a' ~ q_sigma(. | a)`
//! with the reward penalized by `|a - a'|^2`. Networks are small dense MLPs with
//! hand-written backward passes, optimized by Adam.

mod adam;
mod agent;
mod config;
mod eval;
pub mod gradcheck;
mod io;
mod losses;
mod mlp;
pub mod objectives;
mod train;

pub use adam::Adam;
pub use agent::{Agent, Batch, StepReport, Update};
pub use config::{Algorithm, TrainConfig};
pub use eval::{
    agent_ood_probability, evaluate_policy, ood_overestimation_probability, q_landscape, write_landscape_csv,
    EvalReturn, OodEstimate,
};
pub use io::{load_agent, read_agent, save_agent, write_agent};
pub use losses::{expectile_grad, expectile_loss, log_one_minus_tanh_sq, tanh_gaussian_log_prob};
pub use mlp::{Cache, Mlp};
pub use train::{train, write_metrics_csv, MetricsRow, TrainOutcome, METRICS_CSV_HEADER};

use crate::namdp::NamdpError;
use crate::noise::NoiseError;

#[derive(Debug, thiserror::Error)]
pub enum LearnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged: non-finite loss at step {step}")]
    Diverged { step: u64 },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Namdp(#[from] NamdpError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed agent file: {0}")]
    Format(String),
}

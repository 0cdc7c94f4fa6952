//! Noisy-action MDPs and penalized action-noise injection for offline RL.
//!
//! * [`noise`]: action-noise kernels, including the hybrid log-uniform mixture.
//! * [`dataset`]: transition datasets, toy generators, JSONL I/O, finite MDPs.
//! * [`namdp`]: exact construction and solution of the noisy-action MDP from a
//!   finite dataset, plus numerical checks of its limit and bound properties.
//! * [`learn`]: a small MLP stack and the TD3-AN / IQL-AN trainers.

pub mod dataset;
pub mod learn;
pub mod namdp;
pub mod noise;

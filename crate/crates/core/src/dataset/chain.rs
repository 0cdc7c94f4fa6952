//! Continuous-action chain: a desk-scale environment with a known optimal return.
//!
//! From state `k`, an action within `band_width` of `band_center` advances to
//! `k + 1`; any other action leaves the state unchanged. Entering the last
//! state pays `goal_reward` and ends the episode. States are one-hot encoded.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DatasetError, DatasetSource, StateKeyMode, Transition, TransitionDataset};
use crate::noise::ActionBox;

/// An episodic environment used to score trained policies.
pub trait Simulator {
    fn state_dim(&self) -> usize;
    fn bounds(&self) -> &ActionBox;
    fn gamma(&self) -> f64;
    /// Episode step cap.
    fn horizon(&self) -> usize;
    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64>;
    /// Returns `(next_state, reward, done)`.
    fn step(&mut self, action: &[f64]) -> (Vec<f64>, f64, bool);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainParams {
    pub n_states: usize,
    pub band_center: f64,
    pub band_width: f64,
    pub goal_reward: f64,
    pub gamma: f64,
    /// Behavior transitions recorded from each non-goal state.
    pub samples_per_state: usize,
    /// Probability that a behavior action is uniform over the box instead of band-centered.
    pub uniform_fraction: f64,
    /// Standard deviation of the band-centered behavior actions.
    pub behavior_std: f64,
    pub seed: u64,
}

impl Default for ChainParams {
    fn default() -> Self {
        ChainParams {
            n_states: 5,
            band_center: 0.5,
            band_width: 0.15,
            goal_reward: 1.0,
            gamma: 0.99,
            samples_per_state: 32,
            uniform_fraction: 0.5,
            behavior_std: 0.15,
            seed: 0,
        }
    }
}

impl ChainParams {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.n_states < 3 {
            return Err(DatasetError::InvalidParams("chain needs n_states >= 3".into()));
        }
        let lo = self.band_center - self.band_width;
        let hi = self.band_center + self.band_width;
        if !(self.band_width > 0.0 && lo >= -1.0 && hi <= 1.0) {
            return Err(DatasetError::InvalidParams("band must lie within [-1, 1]".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(DatasetError::InvalidParams("gamma must lie in (0, 1)".into()));
        }
        if self.samples_per_state == 0 {
            return Err(DatasetError::InvalidParams("samples_per_state must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.uniform_fraction) || self.behavior_std < 0.0 {
            return Err(DatasetError::InvalidParams("behavior mixture parameters out of range".into()));
        }
        Ok(())
    }

    /// Discounted return of the shortest path from state 0.
    pub fn optimal_return(&self) -> f64 {
        self.gamma.powi(self.n_states as i32 - 2) * self.goal_reward
    }
}

#[derive(Debug, Clone)]
pub struct ChainEnv {
    params: ChainParams,
    bounds: ActionBox,
    position: usize,
}

impl ChainEnv {
    pub fn new(params: ChainParams) -> Result<Self, DatasetError> {
        params.validate()?;
        Ok(ChainEnv { params, bounds: ActionBox::symmetric(1, 1.0)?, position: 0 })
    }

    pub fn params(&self) -> &ChainParams {
        &self.params
    }

    pub fn encode(&self, position: usize) -> Vec<f64> {
        let mut s = vec![0.0; self.params.n_states];
        s[position] = 1.0;
        s
    }

    pub fn in_band(&self, action: f64) -> bool {
        (action - self.params.band_center).abs() <= self.params.band_width
    }

    /// Pure transition function: `(next_position, reward, done)`.
    pub fn transition(&self, position: usize, action: f64) -> (usize, f64, bool) {
        if self.in_band(action) {
            let next = position + 1;
            if next == self.params.n_states - 1 {
                (next, self.params.goal_reward, true)
            } else {
                (next, 0.0, false)
            }
        } else {
            (position, 0.0, false)
        }
    }

    pub fn optimal_return(&self) -> f64 {
        self.params.optimal_return()
    }

    pub fn position(&self) -> usize {
        self.position
    }
}

impl Simulator for ChainEnv {
    fn state_dim(&self) -> usize {
        self.params.n_states
    }

    fn bounds(&self) -> &ActionBox {
        &self.bounds
    }

    fn gamma(&self) -> f64 {
        self.params.gamma
    }

    fn horizon(&self) -> usize {
        4 * self.params.n_states
    }

    fn reset(&mut self, _rng: &mut dyn RngCore) -> Vec<f64> {
        self.position = 0;
        self.encode(0)
    }

    fn step(&mut self, action: &[f64]) -> (Vec<f64>, f64, bool) {
        let (next, r, done) = self.transition(self.position, action[0]);
        self.position = next;
        (self.encode(next), r, done)
    }
}

/// Builds the chain simulator together with a behavior dataset.
///
/// Each non-goal state receives `samples_per_state` transitions whose actions
/// are uniform over `[-1, 1]` with probability `uniform_fraction` and
/// otherwise `N(band_center, behavior_std^2)` clipped to the box.
pub fn gen_chain_env(params: &ChainParams) -> Result<(ChainEnv, TransitionDataset), DatasetError> {
    let env = ChainEnv::new(params.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut transitions = Vec::with_capacity((params.n_states - 1) * params.samples_per_state);
    for position in 0..params.n_states - 1 {
        for _ in 0..params.samples_per_state {
            let a = if rng.gen::<f64>() < params.uniform_fraction {
                rng.gen_range(-1.0..1.0)
            } else {
                let e: f64 = rng.sample(StandardNormal);
                (params.band_center + params.behavior_std * e).clamp(-1.0, 1.0)
            };
            let (next, r, done) = env.transition(position, a);
            transitions.push(Transition { s: env.encode(position), a: vec![a], r, s2: env.encode(next), done });
        }
    }
    let dataset = TransitionDataset::new(transitions, env.bounds.clone(), StateKeyMode::Exact)?
        .with_source(DatasetSource::Chain(params.clone()));
    Ok((env, dataset))
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MdpError {
    #[error("MDP needs at least one state and one action")]
    Empty,
    #[error("table shape mismatch: {0}")]
    Shape(String),
    #[error("P[{s}][{a}] sums to {sum}, not 1")]
    NotStochastic { s: usize, a: usize, sum: f64 },
    #[error("non-finite or negative entry at ({s}, {a})")]
    BadEntry { s: usize, a: usize },
    #[error("gamma must lie in (0, 1), got {0}")]
    Gamma(f64),
}

/// Explicit tabular MDP `(S, A, R, P, gamma)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteMdp {
    n_states: usize,
    n_actions: usize,
    rewards: Vec<Vec<f64>>,
    transitions: Vec<Vec<Vec<f64>>>,
    gamma: f64,
}

impl FiniteMdp {
    pub fn new(rewards: Vec<Vec<f64>>, transitions: Vec<Vec<Vec<f64>>>, gamma: f64) -> Result<Self, MdpError> {
        let n_states = rewards.len();
        let n_actions = rewards.first().map_or(0, Vec::len);
        if n_states == 0 || n_actions == 0 {
            return Err(MdpError::Empty);
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(MdpError::Gamma(gamma));
        }
        if transitions.len() != n_states {
            return Err(MdpError::Shape(format!("{} transition rows for {n_states} states", transitions.len())));
        }
        for s in 0..n_states {
            if rewards[s].len() != n_actions || transitions[s].len() != n_actions {
                return Err(MdpError::Shape(format!("state {s} has the wrong number of actions")));
            }
            for a in 0..n_actions {
                let row = &transitions[s][a];
                if row.len() != n_states {
                    return Err(MdpError::Shape(format!("P[{s}][{a}] has length {}", row.len())));
                }
                if !rewards[s][a].is_finite() || row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                    return Err(MdpError::BadEntry { s, a });
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > 1e-12 {
                    return Err(MdpError::NotStochastic { s, a, sum });
                }
            }
        }
        Ok(FiniteMdp { n_states, n_actions, rewards, transitions, gamma })
    }

    /// A random MDP with `2..=max_states` states and `2..=max_actions` actions.
    ///
    /// Rewards are uniform on `[-1, 1]`; each transition row is a flat
    /// Dirichlet draw.
    pub fn random(seed: u64, max_states: usize, max_actions: usize, gamma: f64) -> Result<Self, MdpError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_states = rng.gen_range(2..=max_states.max(2));
        let n_actions = rng.gen_range(2..=max_actions.max(2));
        let rewards = (0..n_states).map(|_| (0..n_actions).map(|_| rng.gen_range(-1.0..=1.0)).collect()).collect();
        let transitions = (0..n_states)
            .map(|_| {
                (0..n_actions)
                    .map(|_| {
                        let raw: Vec<f64> = (0..n_states).map(|_| rng.sample::<f64, _>(Exp1)).collect();
                        let total: f64 = raw.iter().sum();
                        let mut row: Vec<f64> = raw.iter().map(|x| x / total).collect();
                        // Push rounding residue into the largest entry so the row sums to 1.
                        let resid = 1.0 - row.iter().sum::<f64>();
                        let imax = (0..n_states).max_by(|i, j| row[*i].total_cmp(&row[*j])).unwrap_or(0);
                        row[imax] += resid;
                        row
                    })
                    .collect()
            })
            .collect();
        FiniteMdp::new(rewards, transitions, gamma)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s][a]
    }

    pub fn transition(&self, s: usize, a: usize) -> &[f64] {
        &self.transitions[s][a]
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

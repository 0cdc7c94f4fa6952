//! Offline transition datasets.
//!
//! A [`TransitionDataset`] is the finite set of `(s, a, r, s2, done)` tuples
//! that defines the empirical behavior distribution. States are grouped by a
//! [`StateKey`] so that the empirical `p_D(a | s)` is uniform over the actions
//! listed for a key, counted with multiplicity.

mod chain;
mod generators;
mod jsonl;
mod mdp;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::noise::{ActionBox, NoiseError};

pub use chain::{gen_chain_env, ChainEnv, ChainParams, Simulator};
pub use generators::{gen_bandit1d, gen_pinwheel, gen_rings, PinwheelParams, RingsParams};
pub use jsonl::{load_jsonl, read_jsonl, save_jsonl, write_jsonl};
pub use mdp::{FiniteMdp, MdpError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset is empty")]
    Empty,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: {what}")]
    DimMismatch { line: usize, what: String },
    #[error("transition {index}: action lies outside the action box")]
    ActionOutsideBox { index: usize },
    #[error("transition {index}: non-finite entry")]
    NonFinite { index: usize },
    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s2: Vec<f64>,
    pub done: bool,
}

/// How continuous states are bucketed into keys for `p_D(a | s)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateKeyMode {
    Exact,
    Rounded(u32),
}

/// Hashable identity of a state under a [`StateKeyMode`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateKey(Vec<i64>);

impl StateKey {
    pub fn new(s: &[f64], mode: StateKeyMode) -> Self {
        let parts = match mode {
            StateKeyMode::Exact => s
                .iter()
                .map(|x| {
                    // +0.0 and -0.0 must share a key.
                    let x = if *x == 0.0 { 0.0 } else { *x };
                    x.to_bits() as i64
                })
                .collect(),
            StateKeyMode::Rounded(decimals) => {
                let scale = 10f64.powi(decimals as i32);
                s.iter().map(|x| (x * scale).round() as i64).collect()
            }
        };
        StateKey(parts)
    }
}

/// Describes which generator produced a dataset so that consumers can
/// rebuild the matching simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DatasetSource {
    Bandit1d,
    Rings(RingsParams),
    Pinwheel(PinwheelParams),
    Chain(ChainParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    transitions: Vec<Transition>,
    state_dim: usize,
    action_dim: usize,
    bounds: ActionBox,
    state_key: StateKeyMode,
    source: Option<DatasetSource>,
}

/// One dataset entry as seen from its state group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupEntry {
    /// Position in the dataset.
    pub index: usize,
    pub a: Vec<f64>,
    pub r: f64,
    pub s2: Vec<f64>,
    pub done: bool,
}

impl TransitionDataset {
    pub fn new(transitions: Vec<Transition>, bounds: ActionBox, state_key: StateKeyMode) -> Result<Self, DatasetError> {
        let first = transitions.first().ok_or(DatasetError::Empty)?;
        let state_dim = first.s.len();
        let action_dim = bounds.dim();
        if state_dim == 0 {
            return Err(DatasetError::DimMismatch { line: 0, what: "state dimension is zero".into() });
        }
        for (index, t) in transitions.iter().enumerate() {
            if t.s.len() != state_dim || t.s2.len() != state_dim || t.a.len() != action_dim {
                return Err(DatasetError::DimMismatch {
                    line: index,
                    what: format!(
                        "transition {index} has dims s={} a={} s2={}, expected s={state_dim} a={action_dim}",
                        t.s.len(),
                        t.a.len(),
                        t.s2.len()
                    ),
                });
            }
            let finite = t.s.iter().chain(&t.a).chain(&t.s2).all(|x| x.is_finite()) && t.r.is_finite();
            if !finite {
                return Err(DatasetError::NonFinite { index });
            }
            if !bounds.contains(&t.a) {
                return Err(DatasetError::ActionOutsideBox { index });
            }
        }
        Ok(TransitionDataset { transitions, state_dim, action_dim, bounds, state_key, source: None })
    }

    pub fn with_source(mut self, source: DatasetSource) -> Self {
        self.source = Some(source);
        self
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn bounds(&self) -> &ActionBox {
        &self.bounds
    }

    pub fn state_key_mode(&self) -> StateKeyMode {
        self.state_key
    }

    pub fn source(&self) -> Option<&DatasetSource> {
        self.source.as_ref()
    }

    pub fn key_of(&self, s: &[f64]) -> StateKey {
        StateKey::new(s, self.state_key)
    }

    /// Partitions transitions by state key, in order of first appearance.
    pub fn group_by_state(&self) -> IndexMap<StateKey, Vec<GroupEntry>> {
        let mut groups: IndexMap<StateKey, Vec<GroupEntry>> = IndexMap::new();
        for (index, t) in self.transitions.iter().enumerate() {
            groups.entry(self.key_of(&t.s)).or_default().push(GroupEntry {
                index,
                a: t.a.clone(),
                r: t.r,
                s2: t.s2.clone(),
                done: t.done,
            });
        }
        groups
    }

    /// Distinct dataset actions at the state with key `key`, with multiplicity.
    pub fn actions_at(&self, key: &StateKey) -> Vec<&[f64]> {
        self.transitions.iter().filter(|t| &self.key_of(&t.s) == key).map(|t| t.a.as_slice()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: f64, a: f64, r: f64) -> Transition {
        Transition { s: vec![s], a: vec![a], r, s2: vec![s], done: true }
    }

    #[test]
    fn rejects_empty_and_out_of_box() {
        let bx = ActionBox::symmetric(1, 1.0).unwrap();
        assert!(matches!(TransitionDataset::new(vec![], bx.clone(), StateKeyMode::Exact), Err(DatasetError::Empty)));
        assert!(matches!(
            TransitionDataset::new(vec![t(0.0, 2.0, 0.0)], bx.clone(), StateKeyMode::Exact),
            Err(DatasetError::ActionOutsideBox { index: 0 })
        ));
        assert!(matches!(
            TransitionDataset::new(vec![t(0.0, 0.0, f64::NAN)], bx, StateKeyMode::Exact),
            Err(DatasetError::NonFinite { index: 0 })
        ));
    }

    #[test]
    fn bandit_has_one_group_of_two() {
        let d = gen_bandit1d();
        let g = d.group_by_state();
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].len(), 2);
    }

    #[test]
    fn rounded_keys_merge_nearby_states() {
        let bx = ActionBox::symmetric(1, 1.0).unwrap();
        let data = vec![t(0.1234, 0.0, 0.0), t(0.12341, 0.5, 1.0), t(0.2, 0.1, 0.0)];
        let exact = TransitionDataset::new(data.clone(), bx.clone(), StateKeyMode::Exact).unwrap();
        assert_eq!(exact.group_by_state().len(), 3);
        let rounded = TransitionDataset::new(data, bx, StateKeyMode::Rounded(3)).unwrap();
        let groups = rounded.group_by_state();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].len(), 2);
    }

    #[test]
    fn grouping_preserves_multiplicity() {
        let bx = ActionBox::symmetric(1, 1.0).unwrap();
        let data = vec![t(0.0, 0.5, 1.0), t(0.0, 0.5, 1.0), t(1.0, -0.5, 0.0), t(0.0, -0.1, 0.0)];
        let d = TransitionDataset::new(data, bx, StateKeyMode::Exact).unwrap();
        let groups = d.group_by_state();
        assert_eq!(groups.values().map(Vec::len).sum::<usize>(), d.len());
        assert_eq!(groups[0].len(), 3);
    }

    #[test]
    fn signed_zero_shares_key() {
        assert_eq!(StateKey::new(&[0.0], StateKeyMode::Exact), StateKey::new(&[-0.0], StateKeyMode::Exact));
    }
}

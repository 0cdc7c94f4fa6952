//! The noisy-action MDP (NAMDP) of a finite dataset.
//!
//! For a state `s` with dataset entries `(a_i, r_i, s2_i)` and a candidate
//! action `a'` on an [`ActionGrid`], the posterior weight of entry `i` is
//! proportional to `q_sigma(a' | a_i)`, and
//!
//! ```text
//! R_sigma(s, a')     = sum_i w_i (r_i - |a_i - a'|^2)
//! P_sigma(s' | s, a') = sum_i w_i [s2_i = s']
//! ```
//!
//! Terminal transitions route their mass to an absorbing zero-reward column
//! appended after the last state.

mod export;
mod grid;
mod returns;
mod solve;
mod theory;
pub mod verify;

use serde::Serialize;
use thiserror::Error;

use crate::dataset::{DatasetError, FiniteMdp, MdpError, StateKey, TransitionDataset};
use crate::noise::{ActionBox, NoiseError, NoiseSpec};

pub use export::write_model_csv;
pub use grid::ActionGrid;
pub use returns::{expected_return, Visitation};
pub use solve::{
    bellman_expectation, bellman_optimality, policy_evaluation, value_iteration, QGrid, TabularPolicy, ValueIteration,
};
pub use theory::{
    bellman_gap, count_modes, error_bound_report, lemma_identity_gap, no_ood_check, pani_exact_regression,
    ErrorBoundReport, NoOodReport,
};

pub(crate) use grid::sq_dist;

/// Default additive tolerance when deciding nearest-set membership.
pub const DEFAULT_TIE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum NamdpError {
    #[error("grid: {0}")]
    Grid(String),
    #[error("grid box does not enclose the dataset box")]
    GridDoesNotCover,
    #[error("empty dataset group")]
    EmptyGroup,
    #[error("transition {index} leads to a state with no dataset entries")]
    UnknownNextState { index: usize },
    #[error("did not converge within {iterations} sweeps (final residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("model shape mismatch: {0}")]
    Shape(String),
    #[error("invalid policy: {0}")]
    Policy(String),
    #[error("singular visitation system")]
    Singular,
    #[error("non-finite value encountered")]
    NonFinite,
    #[error("{0}")]
    Unsupported(String),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

/// A finite model the tabular solvers can run on.
///
/// `next` may carry one extra trailing entry for an absorbing, zero-reward
/// terminal state.
pub trait TabularModel {
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn gamma(&self) -> f64;
    fn reward(&self, s: usize, a: usize) -> f64;
    fn next(&self, s: usize, a: usize) -> &[f64];
}

impl TabularModel for FiniteMdp {
    fn n_states(&self) -> usize {
        FiniteMdp::n_states(self)
    }
    fn n_actions(&self) -> usize {
        FiniteMdp::n_actions(self)
    }
    fn gamma(&self) -> f64 {
        FiniteMdp::gamma(self)
    }
    fn reward(&self, s: usize, a: usize) -> f64 {
        FiniteMdp::reward(self, s, a)
    }
    fn next(&self, s: usize, a: usize) -> &[f64] {
        self.transition(s, a)
    }
}

/// How posterior weights over a state's dataset entries are formed.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightRule {
    /// Proportional to the noise kernel.
    Noise(NoiseSpec),
    /// The sigma -> 0 limit: uniform over the nearest entries.
    Nearest { tie_tol: f64 },
}

/// One dataset entry at a state, with its next-state distribution
/// (`n_states + 1` columns, the last being terminal).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupportEntry {
    pub action: Vec<f64>,
    pub reward: f64,
    pub next: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct NamdpModel {
    state_keys: Vec<StateKey>,
    states: Vec<Vec<f64>>,
    supports: Vec<Vec<SupportEntry>>,
    grid: ActionGrid,
    rule: WeightRule,
    weights: Vec<Vec<Vec<f64>>>,
    r_sigma: Vec<Vec<f64>>,
    p_sigma: Vec<Vec<Vec<f64>>>,
    gamma: f64,
}

/// Posterior weights `w_i ∝ q_sigma(a' | a_i)` over a group of dataset actions.
///
/// Falls back to the nearest set when every kernel value underflows.
pub fn posterior_weights(actions: &[&[f64]], a_prime: &[f64], spec: &NoiseSpec) -> Result<Vec<f64>, NamdpError> {
    if actions.is_empty() {
        return Err(NamdpError::EmptyGroup);
    }
    for a in actions.iter().chain(std::iter::once(&a_prime)) {
        if a.len() != spec.bounds().dim() {
            return Err(NoiseError::DimMismatch { expected: spec.bounds().dim(), got: a.len() }.into());
        }
    }
    let logs: Vec<f64> = actions.iter().map(|a| spec.log_density_unchecked(a_prime, a)).collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return nearest_weights(actions, a_prime, DEFAULT_TIE_TOL);
    }
    // Shifting by the max keeps exact ties exact, unlike subtracting a log-sum-exp.
    let u: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = u.iter().sum();
    Ok(u.iter().map(|x| x / total).collect())
}

/// Indices of the entries closest to `a_prime`, within additive `tie_tol` on squared distance.
pub fn nearest_set(actions: &[&[f64]], a_prime: &[f64], tie_tol: f64) -> Vec<usize> {
    let d: Vec<f64> = actions.iter().map(|a| sq_dist(a, a_prime)).collect();
    let best = d.iter().copied().fold(f64::INFINITY, f64::min);
    (0..d.len()).filter(|&i| d[i] <= best + tie_tol).collect()
}

fn nearest_weights(actions: &[&[f64]], a_prime: &[f64], tie_tol: f64) -> Result<Vec<f64>, NamdpError> {
    if actions.is_empty() {
        return Err(NamdpError::EmptyGroup);
    }
    let set = nearest_set(actions, a_prime, tie_tol);
    let mut w = vec![0.0; actions.len()];
    let share = 1.0 / set.len() as f64;
    for i in set {
        w[i] = share;
    }
    Ok(w)
}

impl WeightRule {
    pub fn weights(&self, actions: &[&[f64]], a_prime: &[f64]) -> Result<Vec<f64>, NamdpError> {
        match self {
            WeightRule::Noise(spec) => posterior_weights(actions, a_prime, spec),
            WeightRule::Nearest { tie_tol } => nearest_weights(actions, a_prime, *tie_tol),
        }
    }

    /// Kernel scale; 0 for the nearest-set limit.
    pub fn sigma(&self) -> f64 {
        match self {
            WeightRule::Noise(spec) => spec.sigma(),
            WeightRule::Nearest { .. } => 0.0,
        }
    }
}

/// The NAMDP of `dataset` under noise `spec` on `grid`.
pub fn build_namdp(
    dataset: &TransitionDataset,
    spec: &NoiseSpec,
    grid: &ActionGrid,
    gamma: f64,
) -> Result<NamdpModel, NamdpError> {
    NamdpModel::from_dataset(dataset, WeightRule::Noise(spec.clone()), grid, gamma)
}

/// The sigma -> 0 limit NAMDP: weights uniform over each grid point's nearest set.
pub fn build_limit_namdp(dataset: &TransitionDataset, grid: &ActionGrid, gamma: f64) -> Result<NamdpModel, NamdpError> {
    NamdpModel::from_dataset(dataset, WeightRule::Nearest { tie_tol: DEFAULT_TIE_TOL }, grid, gamma)
}

/// Builds a NAMDP over the state and action indices of a finite MDP.
///
/// Action `k` sits at the `k`-th point of an evenly spaced grid on `[-1, 1]`,
/// and `support[s]` lists the actions observed at `s`. Each observed pair
/// contributes its true reward and its full next-state distribution.
pub fn namdp_from_mdp(mdp: &FiniteMdp, support: &[Vec<usize>], rule: WeightRule) -> Result<NamdpModel, NamdpError> {
    let n = mdp.n_states();
    if support.len() != n {
        return Err(NamdpError::Shape(format!("support has {} rows for {n} states", support.len())));
    }
    let grid = ActionGrid::regular(ActionBox::symmetric(1, 1.0)?, mdp.n_actions().max(2))?;
    let mut supports = Vec::with_capacity(n);
    for (s, acts) in support.iter().enumerate() {
        if acts.is_empty() {
            return Err(NamdpError::EmptyGroup);
        }
        let mut entries = Vec::with_capacity(acts.len());
        for &a in acts {
            if a >= mdp.n_actions() {
                return Err(NamdpError::Shape(format!("action {a} out of range")));
            }
            let mut next = mdp.transition(s, a).to_vec();
            next.push(0.0);
            entries.push(SupportEntry { action: grid.point(a).to_vec(), reward: mdp.reward(s, a), next });
        }
        supports.push(entries);
    }
    let keys = (0..n).map(|s| StateKey::new(&[s as f64], crate::dataset::StateKeyMode::Exact)).collect();
    let states = (0..n).map(|s| vec![s as f64]).collect();
    NamdpModel::from_supports(keys, states, supports, rule, &grid, mdp.gamma())
}

impl NamdpModel {
    pub fn from_dataset(
        dataset: &TransitionDataset,
        rule: WeightRule,
        grid: &ActionGrid,
        gamma: f64,
    ) -> Result<Self, NamdpError> {
        if !grid.bounds().encloses(dataset.bounds()) {
            return Err(NamdpError::GridDoesNotCover);
        }
        let groups = dataset.group_by_state();
        let n = groups.len();
        let keys: Vec<StateKey> = groups.keys().cloned().collect();
        let mut states = Vec::with_capacity(n);
        let mut supports = Vec::with_capacity(n);
        for entries in groups.values() {
            states.push(dataset.transitions()[entries[0].index].s.clone());
            let mut support = Vec::with_capacity(entries.len());
            for e in entries {
                let mut next = vec![0.0; n + 1];
                if e.done {
                    next[n] = 1.0;
                } else {
                    let k = groups
                        .get_index_of(&dataset.key_of(&e.s2))
                        .ok_or(NamdpError::UnknownNextState { index: e.index })?;
                    next[k] = 1.0;
                }
                support.push(SupportEntry { action: e.a.clone(), reward: e.r, next });
            }
            supports.push(support);
        }
        Self::from_supports(keys, states, supports, rule, grid, gamma)
    }

    fn from_supports(
        state_keys: Vec<StateKey>,
        states: Vec<Vec<f64>>,
        supports: Vec<Vec<SupportEntry>>,
        rule: WeightRule,
        grid: &ActionGrid,
        gamma: f64,
    ) -> Result<Self, NamdpError> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(NamdpError::Shape(format!("gamma must lie in [0, 1), got {gamma}")));
        }
        if let WeightRule::Noise(spec) = &rule {
            if spec.bounds().dim() != grid.dim() {
                return Err(NoiseError::DimMismatch { expected: grid.dim(), got: spec.bounds().dim() }.into());
            }
        }
        let n = supports.len();
        let mut weights = Vec::with_capacity(n);
        let mut r_sigma = Vec::with_capacity(n);
        let mut p_sigma = Vec::with_capacity(n);
        for support in &supports {
            let actions: Vec<&[f64]> = support.iter().map(|e| e.action.as_slice()).collect();
            let mut w_s = Vec::with_capacity(grid.len());
            let mut r_s = Vec::with_capacity(grid.len());
            let mut p_s = Vec::with_capacity(grid.len());
            for a_prime in grid.points() {
                let w = rule.weights(&actions, a_prime)?;
                let mut r = 0.0;
                let mut p = vec![0.0; n + 1];
                for (wi, e) in w.iter().zip(support) {
                    if *wi == 0.0 {
                        continue;
                    }
                    r += wi * (e.reward - sq_dist(&e.action, a_prime));
                    for (pk, nk) in p.iter_mut().zip(&e.next) {
                        *pk += wi * nk;
                    }
                }
                if !r.is_finite() {
                    return Err(NamdpError::NonFinite);
                }
                w_s.push(w);
                r_s.push(r);
                p_s.push(p);
            }
            weights.push(w_s);
            r_sigma.push(r_s);
            p_sigma.push(p_s);
        }
        Ok(NamdpModel { state_keys, states, supports, grid: grid.clone(), rule, weights, r_sigma, p_sigma, gamma })
    }

    pub fn state_keys(&self) -> &[StateKey] {
        &self.state_keys
    }

    /// A representative raw state vector per state key.
    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn state_index(&self, key: &StateKey) -> Option<usize> {
        self.state_keys.iter().position(|k| k == key)
    }

    pub fn supports(&self) -> &[Vec<SupportEntry>] {
        &self.supports
    }

    pub fn grid(&self) -> &ActionGrid {
        &self.grid
    }

    pub fn rule(&self) -> &WeightRule {
        &self.rule
    }

    pub fn sigma(&self) -> f64 {
        self.rule.sigma()
    }

    pub fn weights(&self, s: usize, j: usize) -> &[f64] {
        &self.weights[s][j]
    }

    pub fn r_sigma(&self) -> &[Vec<f64>] {
        &self.r_sigma
    }

    pub fn p_sigma(&self, s: usize, j: usize) -> &[f64] {
        &self.p_sigma[s][j]
    }

    pub fn terminal_index(&self) -> usize {
        self.state_keys.len()
    }

    /// `Q(s, a)` at an arbitrary action given state values `v` (terminal is 0).
    pub fn q_at(&self, s: usize, a: &[f64], v: &[f64]) -> Result<f64, NamdpError> {
        let support = &self.supports[s];
        let actions: Vec<&[f64]> = support.iter().map(|e| e.action.as_slice()).collect();
        let w = self.rule.weights(&actions, a)?;
        let mut q = 0.0;
        for (wi, e) in w.iter().zip(support) {
            let bootstrap: f64 = e.next.iter().zip(v).map(|(p, x)| p * x).sum();
            q += wi * (e.reward - sq_dist(&e.action, a) + self.gamma * bootstrap);
        }
        Ok(q)
    }

    /// Largest `|R_sigma|` over the grid.
    pub fn r_bar_max(&self) -> f64 {
        self.r_sigma.iter().flatten().fold(0.0, |m, r| m.max(r.abs()))
    }
}

impl TabularModel for NamdpModel {
    fn n_states(&self) -> usize {
        self.state_keys.len()
    }
    fn n_actions(&self) -> usize {
        self.grid.len()
    }
    fn gamma(&self) -> f64 {
        self.gamma
    }
    fn reward(&self, s: usize, a: usize) -> f64 {
        self.r_sigma[s][a]
    }
    fn next(&self, s: usize, a: usize) -> &[f64] {
        &self.p_sigma[s][a]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{gen_bandit1d, gen_chain_env, gen_rings, ChainParams, RingsParams};
    use crate::noise::NoiseFamily;
    use proptest::prelude::*;

    fn bandit_grid() -> ActionGrid {
        ActionGrid::regular(ActionBox::symmetric(1, 1.5).unwrap(), 301).unwrap()
    }

    fn spec(family: NoiseFamily, sigma: f64, hw: f64) -> NoiseSpec {
        NoiseSpec::new(family, sigma, ActionBox::symmetric(1, hw).unwrap()).unwrap()
    }

    const BANDIT: [&[f64]; 2] = [&[-1.0], &[1.0]];

    #[test]
    fn single_entry_gets_full_weight() {
        for sigma in [1e-8, 0.1, 10.0] {
            let w = posterior_weights(&[&[0.3]], &[-1.2], &spec(NoiseFamily::Gaussian, sigma, 1.5)).unwrap();
            assert_eq!(w, vec![1.0]);
        }
    }

    #[test]
    fn symmetric_families_split_evenly_at_origin() {
        for family in [NoiseFamily::Gaussian, NoiseFamily::Laplace, NoiseFamily::UniformMix, NoiseFamily::Hybrid] {
            let w = posterior_weights(&BANDIT, &[0.0], &spec(family, 0.5, 1.5)).unwrap();
            assert!((w[0] - 0.5).abs() < 1e-12 && (w[1] - 0.5).abs() < 1e-12, "{family}: {w:?}");
        }
    }

    #[test]
    fn gaussian_weight_matches_density_ratio() {
        let w = posterior_weights(&BANDIT, &[0.5], &spec(NoiseFamily::Gaussian, 1.0, 1.5)).unwrap();
        let e = std::f64::consts::E;
        assert!((w[1] - e / (1.0 + e)).abs() < 1e-12);
    }

    #[test]
    fn underflow_falls_back_to_nearest() {
        let w = posterior_weights(&BANDIT, &[0.2], &spec(NoiseFamily::Gaussian, 1e-200, 1.5)).unwrap();
        assert_eq!(w, vec![0.0, 1.0]);
    }

    #[test]
    fn nearest_set_examples() {
        assert_eq!(nearest_set(&BANDIT, &[0.0], DEFAULT_TIE_TOL), vec![0, 1]);
        assert_eq!(nearest_set(&BANDIT, &[0.2], DEFAULT_TIE_TOL), vec![1]);
    }

    proptest! {
        #[test]
        fn nearest_set_matches_brute_force(
            pts in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..30),
            q in (-1.0f64..1.0, -1.0f64..1.0),
        ) {
            let owned: Vec<Vec<f64>> = pts.iter().map(|(x, y)| vec![*x, *y]).collect();
            let actions: Vec<&[f64]> = owned.iter().map(Vec::as_slice).collect();
            let got = nearest_set(&actions, &[q.0, q.1], 0.0);
            let d: Vec<f64> = pts.iter().map(|(x, y)| (x - q.0).powi(2) + (y - q.1).powi(2)).collect();
            let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
            let want: Vec<usize> = (0..d.len()).filter(|&i| d[i] == min).collect();
            prop_assert_eq!(got, want);
        }

        #[test]
        fn weights_are_probability_vectors(
            pts in prop::collection::vec(-1.0f64..1.0, 1..20),
            a_prime in -1.5f64..1.5,
            log_sigma in -20.0f64..1.0,
            fam in 0usize..4,
        ) {
            let family = [NoiseFamily::Gaussian, NoiseFamily::Laplace, NoiseFamily::UniformMix, NoiseFamily::Hybrid][fam];
            let sigma = if family == NoiseFamily::Hybrid { log_sigma.exp().min(1.0) } else { log_sigma.exp() };
            let owned: Vec<[f64; 1]> = pts.iter().map(|x| [*x]).collect();
            let actions: Vec<&[f64]> = owned.iter().map(|a| a.as_slice()).collect();
            let w = posterior_weights(&actions, &[a_prime], &spec(family, sigma, 1.5)).unwrap();
            prop_assert!(w.iter().all(|x| *x >= 0.0 && x.is_finite()));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn bandit_origin_reward_dips_below_both_arms() {
        for family in [NoiseFamily::Gaussian, NoiseFamily::Laplace, NoiseFamily::Hybrid] {
            let m = build_namdp(&gen_bandit1d(), &spec(family, 0.3, 1.5), &bandit_grid(), 0.9).unwrap();
            assert!((m.r_sigma()[0][150] + 0.5).abs() < 1e-12, "{family}");
        }
        let lim = build_limit_namdp(&gen_bandit1d(), &bandit_grid(), 0.9).unwrap();
        assert_eq!(lim.r_sigma()[0][250], 1.0);
        assert_eq!(lim.r_sigma()[0][150], -0.5);
    }

    #[test]
    fn all_terminal_mass_goes_to_sink() {
        let m = build_namdp(&gen_bandit1d(), &spec(NoiseFamily::Gaussian, 0.5, 1.5), &bandit_grid(), 0.9).unwrap();
        for j in 0..m.grid().len() {
            assert_eq!(m.p_sigma(0, j)[0], 0.0);
            assert!((m.p_sigma(0, j)[1] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn rows_are_stochastic_and_rewards_bounded() {
        let (_, d) = gen_chain_env(&ChainParams::default()).unwrap();
        let grid = ActionGrid::regular(ActionBox::symmetric(1, 1.0).unwrap(), 101).unwrap();
        let m = build_namdp(&d, &spec(NoiseFamily::Hybrid, (-2.0f64).exp(), 1.0), &grid, 0.99).unwrap();
        for s in 0..m.n_states() {
            let rmax = m.supports()[s].iter().map(|e| e.reward).fold(f64::NEG_INFINITY, f64::max);
            for j in 0..grid.len() {
                assert!((m.weights(s, j).iter().sum::<f64>() - 1.0).abs() < 1e-10);
                assert!((m.p_sigma(s, j).iter().sum::<f64>() - 1.0).abs() < 1e-10);
                assert!(m.r_sigma()[s][j] <= rmax + 1e-15);
            }
        }
    }

    #[test]
    fn duplicates_shift_weights() {
        let w = posterior_weights(&[&[-1.0], &[1.0], &[1.0]], &[0.0], &spec(NoiseFamily::Gaussian, 0.5, 1.5)).unwrap();
        assert!((w[0] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn grid_must_cover_dataset_box() {
        let small = ActionGrid::regular(ActionBox::symmetric(1, 1.0).unwrap(), 11).unwrap();
        assert!(matches!(build_limit_namdp(&gen_bandit1d(), &small, 0.9), Err(NamdpError::GridDoesNotCover)));
    }

    #[test]
    fn unknown_next_state_is_rejected() {
        use crate::dataset::{StateKeyMode, Transition};
        let t = vec![Transition { s: vec![0.0], a: vec![0.0], r: 0.0, s2: vec![1.0], done: false }];
        let d = TransitionDataset::new(t, ActionBox::symmetric(1, 1.0).unwrap(), StateKeyMode::Exact).unwrap();
        let grid = ActionGrid::regular(ActionBox::symmetric(1, 1.0).unwrap(), 3).unwrap();
        assert!(matches!(build_limit_namdp(&d, &grid, 0.9), Err(NamdpError::UnknownNextState { index: 0 })));
    }

    #[test]
    fn two_dimensional_rings_build() {
        let d = gen_rings(&RingsParams { points_per_ring: 16, ..RingsParams::default() }).unwrap();
        let grid = ActionGrid::regular(ActionBox::symmetric(2, 1.0).unwrap(), 21).unwrap();
        let spec = NoiseSpec::new(NoiseFamily::Gaussian, 0.1, ActionBox::symmetric(2, 1.0).unwrap()).unwrap();
        let m = build_namdp(&d, &spec, &grid, 0.9).unwrap();
        assert_eq!(m.r_sigma()[0].len(), 441);
    }
}

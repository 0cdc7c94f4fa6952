use serde::Serialize;

use super::{
    bellman_optimality, expected_return, sq_dist, value_iteration, ActionGrid, NamdpError, NamdpModel, QGrid,
    TabularModel, TabularPolicy, DEFAULT_TIE_TOL,
};
use crate::dataset::{FiniteMdp, StateKey, TransitionDataset};
use crate::noise::NoiseSpec;

/// Exact minimizer of the weighted least-squares PANI objective on a grid.
///
/// For each state and grid point `a'` this is the kernel-weighted mean of the
/// penalized targets `r_i - |a_i - a'|^2 + gamma v_next(s2_i)`, computed from
/// the raw transitions rather than from a built model. States are ordered by
/// first appearance, matching [`NamdpModel`].
pub fn pani_exact_regression(
    dataset: &TransitionDataset,
    spec: &NoiseSpec,
    grid: &ActionGrid,
    gamma: f64,
    v_next: &dyn Fn(&StateKey) -> f64,
) -> Result<QGrid, NamdpError> {
    if spec.bounds().dim() != dataset.action_dim() || grid.dim() != dataset.action_dim() {
        return Err(NamdpError::Shape("action dimensions disagree".into()));
    }
    let groups = dataset.group_by_state();
    let mut values = Vec::with_capacity(groups.len());
    for entries in groups.values() {
        let targets: Vec<(f64, &[f64])> = entries
            .iter()
            .map(|e| {
                let boot = if e.done { 0.0 } else { v_next(&dataset.key_of(&e.s2)) };
                (e.r + gamma * boot, e.a.as_slice())
            })
            .collect();
        let mut row = Vec::with_capacity(grid.len());
        for a_prime in grid.points() {
            let logs: Vec<f64> = targets.iter().map(|(_, a)| spec.log_density_unchecked(a_prime, a)).collect();
            let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let (mut num, mut den) = (0.0, 0.0);
            if top.is_finite() {
                for ((y, a), l) in targets.iter().zip(&logs) {
                    let u = (l - top).exp();
                    num += u * (y - sq_dist(a, a_prime));
                    den += u;
                }
            } else {
                let best = targets.iter().map(|(_, a)| sq_dist(a, a_prime)).fold(f64::INFINITY, f64::min);
                for (y, a) in &targets {
                    let d = sq_dist(a, a_prime);
                    if d <= best + DEFAULT_TIE_TOL {
                        num += y - d;
                        den += 1.0;
                    }
                }
            }
            row.push(num / den);
        }
        values.push(row);
    }
    QGrid::new(values)
}

/// Largest violation of `E_{p_C}[Q(s, a)] = Q(s, a') + min_a |a' - a|^2`
/// over all states and grid points of a nearest-set model.
///
/// `q` must be the policy's action values on the grid; values at dataset
/// actions are recomputed from the same state values.
pub fn lemma_identity_gap(model: &NamdpModel, q: &QGrid, policy: &TabularPolicy) -> Result<f64, NamdpError> {
    let v = q.policy_values(policy);
    let mut worst: f64 = 0.0;
    for (s, support) in model.supports().iter().enumerate() {
        let at_data: Vec<f64> = support.iter().map(|e| model.q_at(s, &e.action, &v)).collect::<Result<_, _>>()?;
        for (j, a_prime) in model.grid().points().iter().enumerate() {
            let w = model.weights(s, j);
            let lhs: f64 = w.iter().zip(&at_data).map(|(wi, qi)| wi * qi).sum();
            let inf = support.iter().map(|e| sq_dist(&e.action, a_prime)).fold(f64::INFINITY, f64::min);
            worst = worst.max((lhs - (q.get(s, j) + inf)).abs());
        }
    }
    Ok(worst)
}

/// `sup |T_limit Q - T_sigma Q|` over states and grid points.
pub fn bellman_gap(model_sigma: &NamdpModel, model_limit: &NamdpModel, q: &QGrid) -> Result<f64, NamdpError> {
    if model_sigma.state_keys() != model_limit.state_keys()
        || model_sigma.grid().points() != model_limit.grid().points()
        || model_sigma.gamma() != model_limit.gamma()
    {
        return Err(NamdpError::Shape("models differ in states, grid or discount".into()));
    }
    Ok(bellman_optimality(model_limit, q).sup_distance(&bellman_optimality(model_sigma, q)))
}

#[derive(Debug, Clone, Serialize)]
pub struct NoOodReport {
    pub passed: bool,
    /// Largest squared distance from a greedy action to the nearest dataset action at its state.
    pub worst_sq_distance: f64,
    pub epsilon: f64,
    pub slack: f64,
    pub greedy_actions: Vec<Vec<f64>>,
}

/// Solves the model and checks every greedy action lies near the data.
pub fn no_ood_check(model: &NamdpModel, dataset: &TransitionDataset, epsilon: f64) -> Result<NoOodReport, NamdpError> {
    let vi = value_iteration(model, 1e-10, 1_000_000)?;
    let h = model.grid().spacing();
    let slack = model.grid().dim() as f64 * h * h;
    let mut worst: f64 = 0.0;
    let mut greedy_actions = Vec::with_capacity(model.n_states());
    for (s, key) in model.state_keys().iter().enumerate() {
        let a = model.grid().point(vi.greedy[s]);
        let d = dataset.actions_at(key).iter().map(|x| sq_dist(x, a)).fold(f64::INFINITY, f64::min);
        worst = worst.max(d);
        greedy_actions.push(a.to_vec());
    }
    Ok(NoOodReport { passed: worst < epsilon + slack, worst_sq_distance: worst, epsilon, slack, greedy_actions })
}

/// Number of local maxima of `p(a') = mean_i q(a' | a_i)` on a 1-D grid.
///
/// Runs of equal values count once; a run touching the grid edge counts when
/// it exceeds its interior neighbor.
pub fn count_modes(dataset: &TransitionDataset, spec: &NoiseSpec, grid: &ActionGrid) -> Result<usize, NamdpError> {
    if dataset.action_dim() != 1 || grid.dim() != 1 || spec.bounds().dim() != 1 {
        return Err(NamdpError::Unsupported("mode counting needs 1-D actions".into()));
    }
    let actions: Vec<&[f64]> = dataset.transitions().iter().map(|t| t.a.as_slice()).collect();
    let n = actions.len() as f64;
    let p: Vec<f64> = grid
        .points()
        .iter()
        .map(|x| actions.iter().map(|a| spec.log_density_unchecked(x, a).exp()).sum::<f64>() / n)
        .collect();
    Ok(count_plateau_maxima(&p))
}

fn count_plateau_maxima(p: &[f64]) -> usize {
    let same = |a: f64, b: f64| (a - b).abs() <= 1e-14 * a.abs().max(b.abs());
    let mut modes = 0;
    let mut i = 0;
    while i < p.len() {
        let mut j = i;
        while j + 1 < p.len() && same(p[j + 1], p[i]) {
            j += 1;
        }
        let left_lower = i == 0 || p[i - 1] < p[i];
        let right_lower = j + 1 == p.len() || p[j + 1] < p[j];
        let isolated = i == 0 && j + 1 == p.len();
        if left_lower && right_lower && !isolated {
            modes += 1;
        }
        i = j + 1;
    }
    modes
}

/// Both sides of the return-error bound for one policy.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorBoundReport {
    pub eta_true: f64,
    pub eta_namdp: f64,
    pub lhs: f64,
    /// Reward error under the unnormalized occupancy: `E_d |R - R_sigma| / (1 - gamma)`.
    pub eps_r: f64,
    /// `E_d |R - R_sigma|` with the normalized visitation.
    pub eps_r_per_step: f64,
    pub eps_m: f64,
    pub r_bar_max: f64,
    pub expected_tv: f64,
    pub visitation: Vec<Vec<f64>>,
    pub holds: bool,
}

/// Compares the discounted return of `policy` in the true MDP and its NAMDP.
///
/// `d` is the normalized visitation of the true MDP. `eps_m` is
/// `2 r_max gamma E_d[TV] / (1 - gamma)^2` with `r_max = max |R_sigma|`.
/// `eps_r` carries the `1 / (1 - gamma)` occupancy factor; without it the
/// bound fails whenever the models differ only in reward.
pub fn error_bound_report(
    mdp: &FiniteMdp,
    namdp: &NamdpModel,
    policy: &TabularPolicy,
    start: &[f64],
) -> Result<ErrorBoundReport, NamdpError> {
    let n = mdp.n_states();
    if namdp.n_states() != n || namdp.n_actions() != mdp.n_actions() || namdp.gamma() != mdp.gamma() {
        return Err(NamdpError::Shape("NAMDP is not aligned with the MDP".into()));
    }
    let gamma = mdp.gamma();
    let truth = expected_return(mdp, policy, start)?;
    let noisy = expected_return(namdp, policy, start)?;
    let mut eps_r_per_step = 0.0;
    let mut expected_tv = 0.0;
    for s in 0..n {
        for a in 0..mdp.n_actions() {
            let d = truth.d[s][a];
            if d == 0.0 {
                continue;
            }
            eps_r_per_step += d * (mdp.reward(s, a) - namdp.reward(s, a)).abs();
            let p = mdp.transition(s, a);
            let q = namdp.next(s, a);
            let tv = 0.5 * (0..q.len()).map(|k| (p.get(k).copied().unwrap_or(0.0) - q[k]).abs()).sum::<f64>();
            expected_tv += d * tv;
        }
    }
    let r_bar_max = namdp.r_bar_max();
    let eps_r = eps_r_per_step / (1.0 - gamma);
    let eps_m = 2.0 * r_bar_max * gamma * expected_tv / (1.0 - gamma).powi(2);
    let lhs = (truth.eta - noisy.eta).abs();
    // Slack for the two linear solves.
    let holds = lhs <= eps_r + eps_m + 1e-10;
    Ok(ErrorBoundReport {
        eta_true: truth.eta,
        eta_namdp: noisy.eta,
        lhs,
        eps_r,
        eps_r_per_step,
        eps_m,
        r_bar_max,
        expected_tv,
        visitation: truth.d,
        holds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{gen_bandit1d, gen_chain_env, ChainParams, StateKeyMode, Transition};
    use crate::namdp::{build_limit_namdp, build_namdp, namdp_from_mdp, policy_evaluation, WeightRule};
    use crate::noise::{ActionBox, NoiseFamily};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn b15() -> ActionBox {
        ActionBox::symmetric(1, 1.5).unwrap()
    }

    fn bandit_grid() -> ActionGrid {
        ActionGrid::regular(b15(), 301).unwrap()
    }

    #[test]
    fn regression_on_bandit_is_r_sigma() {
        let spec = NoiseSpec::new(NoiseFamily::Laplace, 0.7, b15()).unwrap();
        let m = build_namdp(&gen_bandit1d(), &spec, &bandit_grid(), 0.9).unwrap();
        let q = pani_exact_regression(&gen_bandit1d(), &spec, &bandit_grid(), 0.9, &|_| 0.0).unwrap();
        for (a, b) in q.values()[0].iter().zip(&m.r_sigma()[0]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn regression_reproduces_policy_evaluation_on_chain() {
        let (_, d) = gen_chain_env(&ChainParams::default()).unwrap();
        let grid = ActionGrid::regular(ActionBox::symmetric(1, 1.0).unwrap(), 101).unwrap();
        let spec = NoiseSpec::new(NoiseFamily::Gaussian, 0.1, ActionBox::symmetric(1, 1.0).unwrap()).unwrap();
        let m = build_namdp(&d, &spec, &grid, 0.99).unwrap();
        let pi = TabularPolicy::uniform(m.n_states(), grid.len());
        let q = policy_evaluation(&m, &pi, 1e-10, 1_000_000).unwrap();
        let v = q.policy_values(&pi);
        let lookup = |k: &StateKey| v[m.state_index(k).unwrap()];
        let reg = pani_exact_regression(&d, &spec, &grid, 0.99, &lookup).unwrap();
        assert!(reg.sup_distance(&q) <= 1e-8, "{}", reg.sup_distance(&q));
    }

    #[test]
    fn regression_at_data_point_with_tiny_sigma_is_plain_target() {
        let bounds = ActionBox::symmetric(1, 1.0).unwrap();
        let t = vec![
            Transition { s: vec![0.0], a: vec![-0.5], r: 2.0, s2: vec![1.0], done: false },
            Transition { s: vec![0.0], a: vec![0.5], r: 2.0, s2: vec![0.0], done: false },
            Transition { s: vec![1.0], a: vec![0.0], r: 2.0, s2: vec![1.0], done: true },
        ];
        let d = TransitionDataset::new(t, bounds.clone(), StateKeyMode::Exact).unwrap();
        let grid = ActionGrid::regular(bounds.clone(), 5).unwrap();
        let spec = NoiseSpec::new(NoiseFamily::Gaussian, 1e-6, bounds).unwrap();
        let v = |k: &StateKey| if *k == d.key_of(&[1.0]) { 3.0 } else { 7.0 };
        let q = pani_exact_regression(&d, &spec, &grid, 0.5, &v).unwrap();
        assert_eq!(q.get(0, 1), 2.0 + 0.5 * 3.0);
        assert_eq!(q.get(0, 3), 2.0 + 0.5 * 7.0);
    }

    #[test]
    fn limit_identity_on_bandit_and_chain() {
        let lim = build_limit_namdp(&gen_bandit1d(), &bandit_grid(), 0.9).unwrap();
        let pi = TabularPolicy::uniform(1, 301);
        let q = policy_evaluation(&lim, &pi, 1e-12, 100).unwrap();
        assert_eq!(q.get(0, 150), -0.5);
        assert!(lemma_identity_gap(&lim, &q, &pi).unwrap() < 1e-12);

        let (_, d) = gen_chain_env(&ChainParams::default()).unwrap();
        let grid = ActionGrid::regular(ActionBox::symmetric(1, 1.0).unwrap(), 101).unwrap();
        let lim = build_limit_namdp(&d, &grid, 0.99).unwrap();
        let vi = value_iteration(&lim, 1e-11, 1_000_000).unwrap();
        let pi = TabularPolicy::deterministic(&vi.greedy, grid.len());
        let q = policy_evaluation(&lim, &pi, 1e-11, 1_000_000).unwrap();
        assert!(lemma_identity_gap(&lim, &q, &pi).unwrap() < 1e-8);
    }

    #[test]
    fn small_sigma_converges_to_limit_model() {
        let spec = NoiseSpec::new(NoiseFamily::Gaussian, 1e-6, b15()).unwrap();
        let m = build_namdp(&gen_bandit1d(), &spec, &bandit_grid(), 0.9).unwrap();
        let lim = build_limit_namdp(&gen_bandit1d(), &bandit_grid(), 0.9).unwrap();
        let gap = m.r_sigma()[0].iter().zip(&lim.r_sigma()[0]).fold(0.0f64, |g, (a, b)| g.max((a - b).abs()));
        assert!(gap <= 1e-4);
    }

    #[test]
    fn bellman_gap_shrinks_and_bounds_value_gap() {
        let d = gen_bandit1d();
        let lim = build_limit_namdp(&d, &bandit_grid(), 0.9).unwrap();
        assert_eq!(bellman_gap(&lim, &lim, &QGrid::zeros(1, 301)).unwrap(), 0.0);
        let q_lim = value_iteration(&lim, 1e-12, 1000).unwrap().q;
        let mut prev = f64::INFINITY;
        for sigma in [0.5, 0.25, 0.1, 0.05, 0.01] {
            let spec = NoiseSpec::new(NoiseFamily::Gaussian, sigma, b15()).unwrap();
            let m = build_namdp(&d, &spec, &bandit_grid(), 0.9).unwrap();
            let gap = bellman_gap(&m, &lim, &q_lim).unwrap();
            assert!(gap <= prev, "sigma {sigma}: {gap} > {prev}");
            prev = gap;
            let q_sigma = value_iteration(&m, 1e-12, 1000).unwrap().q;
            assert!(q_sigma.sup_distance(&q_lim) <= gap / (1.0 - 0.9) + 1e-12);
        }
    }

    #[test]
    fn no_ood_examples() {
        let d = gen_bandit1d();
        let lim = build_limit_namdp(&d, &bandit_grid(), 0.9).unwrap();
        let r = no_ood_check(&lim, &d, 1e-2).unwrap();
        assert!(r.passed && r.worst_sq_distance == 0.0);
        assert_eq!(r.greedy_actions, vec![vec![1.0]]);

        let (_, chain) = gen_chain_env(&ChainParams::default()).unwrap();
        let grid = ActionGrid::regular(ActionBox::symmetric(1, 1.0).unwrap(), 101).unwrap();
        let spec = NoiseSpec::new(NoiseFamily::Gaussian, 1e-4, ActionBox::symmetric(1, 1.0).unwrap()).unwrap();
        let m = build_namdp(&chain, &spec, &grid, 0.99).unwrap();
        assert!(no_ood_check(&m, &chain, 1e-2).unwrap().passed);
    }

    #[test]
    fn mode_counts_follow_kernel_shape() {
        let d = gen_bandit1d();
        let grid = bandit_grid();
        let fine = grid.refined(10).unwrap();
        let cases = [
            (NoiseFamily::Gaussian, 0.5f64.sqrt(), 2),
            (NoiseFamily::Gaussian, 1.0, 1),
            (NoiseFamily::Laplace, 1.0, 2),
        ];
        for (family, sigma, want) in cases {
            let spec = NoiseSpec::new(family, sigma, b15()).unwrap();
            assert_eq!(count_modes(&d, &spec, &grid).unwrap(), want, "{family} {sigma}");
            assert_eq!(count_modes(&d, &spec, &fine).unwrap(), want, "{family} {sigma} fine");
        }
    }

    #[test]
    fn plateau_counting() {
        assert_eq!(count_plateau_maxima(&[0.0, 1.0, 1.0, 0.0, 2.0]), 2);
        assert_eq!(count_plateau_maxima(&[3.0, 1.0, 2.0, 2.0, 2.0]), 2);
        assert_eq!(count_plateau_maxima(&[1.0, 1.0, 1.0]), 0);
        assert_eq!(count_plateau_maxima(&[0.0, 1.0, 0.5, 1.0, 0.0]), 2);
    }

    fn full_support(mdp: &FiniteMdp) -> Vec<Vec<usize>> {
        vec![(0..mdp.n_actions()).collect(); mdp.n_states()]
    }

    fn point_mass(n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[0] = 1.0;
        v
    }

    #[test]
    fn identical_models_have_zero_error() {
        let mdp = FiniteMdp::random(0, 5, 4, 0.9).unwrap();
        let m = namdp_from_mdp(&mdp, &full_support(&mdp), WeightRule::Nearest { tie_tol: 1e-9 }).unwrap();
        let pi = TabularPolicy::uniform(mdp.n_states(), mdp.n_actions());
        let r = error_bound_report(&mdp, &m, &pi, &point_mass(mdp.n_states())).unwrap();
        assert!(r.lhs < 1e-12 && r.eps_r == 0.0 && r.eps_m == 0.0, "{r:?}");
    }

    #[test]
    fn bound_holds_on_random_mdps() {
        for seed in 0..100 {
            let mdp = FiniteMdp::random(seed, 5, 4, 0.9).unwrap();
            let spec = NoiseSpec::new(NoiseFamily::Gaussian, 0.3, ActionBox::symmetric(1, 1.0).unwrap()).unwrap();
            let m = namdp_from_mdp(&mdp, &full_support(&mdp), WeightRule::Noise(spec)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let probs = (0..mdp.n_states())
                .map(|_| {
                    let raw: Vec<f64> = (0..mdp.n_actions()).map(|_| rng.gen::<f64>() + 1e-3).collect();
                    let t: f64 = raw.iter().sum();
                    raw.iter().map(|x| x / t).collect()
                })
                .collect();
            let pi = TabularPolicy::new(probs).unwrap();
            let r = error_bound_report(&mdp, &m, &pi, &point_mass(mdp.n_states())).unwrap();
            assert!(r.holds, "seed {seed}: {r:?}");
        }
    }

    #[test]
    fn reward_only_difference_needs_occupancy_factor() {
        // Every action shares one transition row, so TV = 0 and the gap is pure reward error.
        let p = vec![0.5, 0.5];
        let mdp = FiniteMdp::new(
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            vec![vec![p.clone(), p.clone()], vec![p.clone(), p]],
            0.9,
        )
        .unwrap();
        let spec = NoiseSpec::new(NoiseFamily::Gaussian, 0.5, ActionBox::symmetric(1, 1.0).unwrap()).unwrap();
        let m = namdp_from_mdp(&mdp, &full_support(&mdp), WeightRule::Noise(spec)).unwrap();
        let pi = TabularPolicy::deterministic(&[1, 0], 2);
        let r = error_bound_report(&mdp, &m, &pi, &[1.0, 0.0]).unwrap();
        assert_eq!(r.eps_m, 0.0);
        assert!(r.lhs > r.eps_r_per_step * 5.0);
        assert!((r.lhs - r.eps_r).abs() < 1e-10 && r.holds);
    }

    #[test]
    fn eps_m_is_linear_in_reward_scale() {
        let mdp = FiniteMdp::random(7, 5, 4, 0.9).unwrap();
        let scaled = FiniteMdp::new(
            (0..mdp.n_states()).map(|s| (0..mdp.n_actions()).map(|a| 3.0 * mdp.reward(s, a)).collect()).collect(),
            (0..mdp.n_states())
                .map(|s| (0..mdp.n_actions()).map(|a| mdp.transition(s, a).to_vec()).collect())
                .collect(),
            0.9,
        )
        .unwrap();
        let rule = WeightRule::Nearest { tie_tol: 1e-9 };
        let support: Vec<Vec<usize>> = vec![vec![0]; mdp.n_states()];
        let pi = TabularPolicy::uniform(mdp.n_states(), mdp.n_actions());
        let a = namdp_from_mdp(&mdp, &support, rule.clone()).unwrap();
        let b = namdp_from_mdp(&scaled, &support, rule).unwrap();
        let ra = error_bound_report(&mdp, &a, &pi, &point_mass(mdp.n_states())).unwrap();
        let rb = error_bound_report(&scaled, &b, &pi, &point_mass(mdp.n_states())).unwrap();
        assert!((ra.expected_tv - rb.expected_tv).abs() < 1e-14);
        assert!((rb.eps_m / rb.r_bar_max - ra.eps_m / ra.r_bar_max).abs() < 1e-12);
    }
}

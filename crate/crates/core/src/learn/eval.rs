use std::io::Write;

use ndarray::Array2;
use rand::{Rng, RngCore};

use super::{Agent, LearnError};
use crate::dataset::{Simulator, TransitionDataset};
use crate::namdp::{ActionGrid, QGrid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReturn {
    pub discounted: f64,
    pub undiscounted: f64,
}

/// Mean returns of `policy` over `episodes` rollouts, each capped at the simulator horizon.
pub fn evaluate_policy(
    sim: &mut dyn Simulator,
    policy: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    episodes: usize,
    rng: &mut dyn RngCore,
) -> EvalReturn {
    let gamma = sim.gamma();
    let (mut disc, mut undisc) = (0.0, 0.0);
    for _ in 0..episodes {
        let mut s = sim.reset(rng);
        let mut g = 1.0;
        for _ in 0..sim.horizon() {
            let a = policy(&s);
            let (s2, r, done) = sim.step(&a);
            disc += g * r;
            undisc += r;
            g *= gamma;
            s = s2;
            if done {
                break;
            }
        }
    }
    let n = episodes.max(1) as f64;
    EvalReturn { discounted: disc / n, undiscounted: undisc / n }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OodEstimate {
    pub probability: f64,
    /// Half-width of the normal-approximation 95% interval.
    pub half_width: f64,
    pub samples: usize,
}

/// Monte Carlo estimate of `P(Q(s, a') > Q(s, a))` with `(s, a)` uniform over the
/// dataset and `a'` uniform over its action box.
pub fn ood_overestimation_probability<R: Rng + ?Sized>(
    q: &dyn Fn(&[f64], &[f64]) -> f64,
    dataset: &TransitionDataset,
    n_samples: usize,
    rng: &mut R,
) -> Result<OodEstimate, LearnError> {
    if n_samples == 0 {
        return Err(LearnError::Config("n_samples must be at least 1".into()));
    }
    if dataset.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    let t = dataset.transitions();
    let mut hits = 0usize;
    for _ in 0..n_samples {
        let tr = &t[rng.gen_range(0..t.len())];
        let a_ood = dataset.bounds().sample_uniform(rng);
        if q(&tr.s, &a_ood) > q(&tr.s, &tr.a) {
            hits += 1;
        }
    }
    let p = hits as f64 / n_samples as f64;
    Ok(OodEstimate { probability: p, half_width: 1.96 * (p * (1.0 - p) / n_samples as f64).sqrt(), samples: n_samples })
}

/// Batched variant for an agent's min-critic.
pub fn agent_ood_probability<R: Rng + ?Sized>(
    agent: &Agent,
    dataset: &TransitionDataset,
    n_samples: usize,
    rng: &mut R,
) -> Result<OodEstimate, LearnError> {
    if n_samples == 0 {
        return Err(LearnError::Config("n_samples must be at least 1".into()));
    }
    if dataset.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    let t = dataset.transitions();
    let (sd, ad) = (dataset.state_dim(), dataset.action_dim());
    let mut s = Array2::zeros((n_samples, sd));
    let mut a = Array2::zeros((n_samples, ad));
    let mut a_ood = Array2::zeros((n_samples, ad));
    for i in 0..n_samples {
        let tr = &t[rng.gen_range(0..t.len())];
        let u = dataset.bounds().sample_uniform(rng);
        for k in 0..sd {
            s[(i, k)] = tr.s[k];
        }
        for k in 0..ad {
            a[(i, k)] = tr.a[k];
            a_ood[(i, k)] = u[k];
        }
    }
    let q_data = agent.q_min_batch(s.view(), a.view())?;
    let q_ood = agent.q_min_batch(s.view(), a_ood.view())?;
    let hits = q_data.iter().zip(&q_ood).filter(|(d, o)| o > d).count();
    let p = hits as f64 / n_samples as f64;
    Ok(OodEstimate { probability: p, half_width: 1.96 * (p * (1.0 - p) / n_samples as f64).sqrt(), samples: n_samples })
}

/// The agent's min-critic at `state` over every grid action, as a one-state `QGrid`.
pub fn q_landscape(agent: &Agent, state: &[f64], grid: &ActionGrid) -> Result<QGrid, LearnError> {
    if state.len() != agent.state_dim() || grid.dim() != agent.action_dim() {
        return Err(LearnError::Shape("state or grid dimension does not match the agent".into()));
    }
    let n = grid.len();
    let s = Array2::from_shape_fn((n, state.len()), |(_, k)| state[k]);
    let a = Array2::from_shape_fn((n, grid.dim()), |(j, k)| grid.point(j)[k]);
    Ok(QGrid::new(vec![agent.q_min_batch(s.view(), a.view())?])?)
}

/// Writes `a1..ak,q` rows for a one-state landscape.
pub fn write_landscape_csv<W: Write>(grid: &ActionGrid, q: &QGrid, mut out: W) -> Result<(), LearnError> {
    let header: Vec<String> = (1..=grid.dim()).map(|k| format!("a{k}")).chain(["q".to_string()]).collect();
    writeln!(out, "{}", header.join(","))?;
    for j in 0..grid.len() {
        let cols: Vec<String> = grid.point(j).iter().map(|x| x.to_string()).collect();
        writeln!(out, "{},{}", cols.join(","), q.get(0, j))?;
    }
    Ok(())
}

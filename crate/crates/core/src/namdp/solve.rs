use serde::Serialize;

use super::{NamdpError, TabularModel};

/// Tabular action values `Q[state][action]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QGrid {
    values: Vec<Vec<f64>>,
}

impl QGrid {
    pub fn new(values: Vec<Vec<f64>>) -> Result<Self, NamdpError> {
        if values.iter().flatten().any(|q| !q.is_finite()) {
            return Err(NamdpError::NonFinite);
        }
        Ok(QGrid { values })
    }

    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        QGrid { values: vec![vec![0.0; n_actions]; n_states] }
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s][a]
    }

    pub fn n_states(&self) -> usize {
        self.values.len()
    }

    /// Argmax per state, lowest index on ties.
    pub fn greedy(&self) -> Vec<usize> {
        self.values
            .iter()
            .map(|row| {
                let mut best = 0;
                for (j, q) in row.iter().enumerate() {
                    if *q > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    pub fn max_values(&self) -> Vec<f64> {
        self.values.iter().map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect()
    }

    /// `V(s) = sum_a pi(a|s) Q(s, a)`.
    pub fn policy_values(&self, policy: &TabularPolicy) -> Vec<f64> {
        self.values
            .iter()
            .enumerate()
            .map(|(s, row)| row.iter().zip(policy.probs(s)).map(|(q, p)| q * p).sum())
            .collect()
    }

    pub fn sup_distance(&self, other: &QGrid) -> f64 {
        self.values.iter().flatten().zip(other.values.iter().flatten()).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// A stochastic policy over a finite action set, one distribution per state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TabularPolicy {
    probs: Vec<Vec<f64>>,
}

impl TabularPolicy {
    pub fn new(probs: Vec<Vec<f64>>) -> Result<Self, NamdpError> {
        for (s, row) in probs.iter().enumerate() {
            if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
                return Err(NamdpError::Policy(format!("row {s} is not a probability vector")));
            }
        }
        Ok(TabularPolicy { probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        TabularPolicy { probs: vec![vec![1.0 / n_actions as f64; n_actions]; n_states] }
    }

    pub fn deterministic(actions: &[usize], n_actions: usize) -> Self {
        let probs = actions
            .iter()
            .map(|&a| {
                let mut row = vec![0.0; n_actions];
                row[a] = 1.0;
                row
            })
            .collect();
        TabularPolicy { probs }
    }

    pub fn probs(&self, s: usize) -> &[f64] {
        &self.probs[s]
    }

    pub fn n_states(&self) -> usize {
        self.probs.len()
    }

    fn check<M: TabularModel + ?Sized>(&self, model: &M) -> Result<(), NamdpError> {
        if self.probs.len() != model.n_states() || self.probs.iter().any(|r| r.len() != model.n_actions()) {
            return Err(NamdpError::Policy("policy shape does not match the model".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ValueIteration {
    pub q: QGrid,
    pub greedy: Vec<usize>,
    /// Sup-norm change per sweep.
    pub residuals: Vec<f64>,
}

fn backup<M: TabularModel + ?Sized>(model: &M, v: &[f64]) -> Vec<Vec<f64>> {
    let gamma = model.gamma();
    (0..model.n_states())
        .map(|s| {
            (0..model.n_actions())
                .map(|a| {
                    // The terminal column, if present, multiplies an implicit zero.
                    let ev: f64 = model.next(s, a).iter().zip(v).map(|(p, x)| p * x).sum();
                    model.reward(s, a) + gamma * ev
                })
                .collect()
        })
        .collect()
}

/// `(T Q)(s, a) = R(s, a) + gamma E[max_a' Q(s', a')]`.
pub fn bellman_optimality<M: TabularModel + ?Sized>(model: &M, q: &QGrid) -> QGrid {
    QGrid { values: backup(model, &q.max_values()) }
}

/// `(T^pi Q)(s, a) = R(s, a) + gamma E[sum_a' pi(a'|s') Q(s', a')]`.
pub fn bellman_expectation<M: TabularModel + ?Sized>(
    model: &M,
    policy: &TabularPolicy,
    q: &QGrid,
) -> Result<QGrid, NamdpError> {
    policy.check(model)?;
    Ok(QGrid { values: backup(model, &q.policy_values(policy)) })
}

/// Sweeps until the iterate is within `tol` of the fixed point in sup-norm.
fn iterate<F>(
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    tol: f64,
    max_iter: usize,
    mut step: F,
) -> Result<(QGrid, Vec<f64>), NamdpError>
where
    F: FnMut(&QGrid) -> QGrid,
{
    // |Q_k - Q*| <= gamma / (1 - gamma) |Q_k - Q_{k-1}|
    let stop = if gamma == 0.0 { f64::INFINITY } else { tol * (1.0 - gamma) / gamma };
    let mut q = QGrid::zeros(n_states, n_actions);
    let mut residuals = Vec::new();
    for _ in 0..max_iter {
        let next = step(&q);
        let res = next.sup_distance(&q);
        if !res.is_finite() {
            return Err(NamdpError::NonFinite);
        }
        residuals.push(res);
        q = next;
        if res <= stop || res == 0.0 {
            return Ok((q, residuals));
        }
    }
    Err(NamdpError::NotConverged { iterations: max_iter, residual: residuals.last().copied().unwrap_or(f64::NAN) })
}

pub fn value_iteration<M: TabularModel + ?Sized>(
    model: &M,
    tol: f64,
    max_iter: usize,
) -> Result<ValueIteration, NamdpError> {
    let (q, residuals) =
        iterate(model.n_states(), model.n_actions(), model.gamma(), tol, max_iter, |q| bellman_optimality(model, q))?;
    Ok(ValueIteration { greedy: q.greedy(), q, residuals })
}

pub fn policy_evaluation<M: TabularModel + ?Sized>(
    model: &M,
    policy: &TabularPolicy,
    tol: f64,
    max_iter: usize,
) -> Result<QGrid, NamdpError> {
    policy.check(model)?;
    let (q, _) = iterate(model.n_states(), model.n_actions(), model.gamma(), tol, max_iter, |q| QGrid {
        values: backup(model, &q.policy_values(policy)),
    })?;
    Ok(q)
}

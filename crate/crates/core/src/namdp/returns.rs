use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{NamdpError, TabularModel, TabularPolicy};

/// Discounted return and normalized state-action visitation of a policy.
#[derive(Debug, Clone, Serialize)]
pub struct Visitation {
    pub eta: f64,
    /// `d[s][a]`, summing to 1 together with `terminal_mass`.
    pub d: Vec<Vec<f64>>,
    pub terminal_mass: f64,
}

/// Solves `(I - gamma P_pi^T) d = (1 - gamma) mu` and returns
/// `eta = sum d R / (1 - gamma)`.
pub fn expected_return<M: TabularModel + ?Sized>(
    model: &M,
    policy: &TabularPolicy,
    start: &[f64],
) -> Result<Visitation, NamdpError> {
    let n = model.n_states();
    let na = model.n_actions();
    let gamma = model.gamma();
    if policy.n_states() != n || (0..n).any(|s| policy.probs(s).len() != na) {
        return Err(NamdpError::Policy("policy shape does not match the model".into()));
    }
    if start.len() != n || (start.iter().sum::<f64>() - 1.0).abs() > 1e-10 || start.iter().any(|p| *p < 0.0) {
        return Err(NamdpError::Shape("start distribution must be a probability vector over states".into()));
    }
    let width =
        (0..n).flat_map(|s| (0..na).map(move |a| (s, a))).map(|(s, a)| model.next(s, a).len()).max().unwrap_or(n);
    if width != n && width != n + 1 {
        return Err(NamdpError::Shape(format!("next-state rows have {width} entries for {n} states")));
    }
    let m = width;
    let mut p_pi = DMatrix::<f64>::zeros(m, m);
    for s in 0..n {
        for (a, pa) in policy.probs(s).iter().enumerate() {
            if *pa == 0.0 {
                continue;
            }
            for (k, p) in model.next(s, a).iter().enumerate() {
                p_pi[(s, k)] += pa * p;
            }
        }
    }
    if m == n + 1 {
        p_pi[(n, n)] = 1.0;
    }
    let lhs = DMatrix::<f64>::identity(m, m) - p_pi.transpose() * gamma;
    let mut mu = DVector::<f64>::zeros(m);
    for (i, p) in start.iter().enumerate() {
        mu[i] = (1.0 - gamma) * p;
    }
    let ds = lhs.lu().solve(&mu).ok_or(NamdpError::Singular)?;
    let d: Vec<Vec<f64>> = (0..n).map(|s| policy.probs(s).iter().map(|pa| ds[s] * pa).collect()).collect();
    let eta = (0..n).map(|s| (0..na).map(|a| d[s][a] * model.reward(s, a)).sum::<f64>()).sum::<f64>() / (1.0 - gamma);
    if !eta.is_finite() {
        return Err(NamdpError::NonFinite);
    }
    let terminal_mass = if m == n + 1 { ds[n] } else { 0.0 };
    Ok(Visitation { eta, d, terminal_mass })
}

//! Loss-and-gradient functions for every update in TD3-AN and IQL-AN.
//!
//! All randomness (noised actions, target smoothing noise, reparameterization
//! draws) is passed in explicitly so the same code runs in training and in
//! finite-difference checks. Losses are batch means.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

use super::losses::{expectile_grad, expectile_loss, log_one_minus_tanh_sq};
use super::{LearnError, Mlp};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Affine tanh squashing onto a box: `a = center + half * tanh(u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Squash {
    pub center: Vec<f64>,
    pub half: Vec<f64>,
}

impl Squash {
    pub fn apply(&self, u: &Array2<f64>) -> Array2<f64> {
        let mut a = u.mapv(f64::tanh);
        for mut row in a.rows_mut() {
            for k in 0..row.len() {
                row[k] = self.center[k] + self.half[k] * row[k];
            }
        }
        a
    }

    /// `da/du` elementwise.
    fn jacobian(&self, u: &Array2<f64>) -> Array2<f64> {
        let mut j = u.mapv(|x| 1.0 - x.tanh().powi(2));
        for mut row in j.rows_mut() {
            for k in 0..row.len() {
                row[k] *= self.half[k];
            }
        }
        j
    }
}

pub fn state_action(s: ArrayView2<'_, f64>, a: ArrayView2<'_, f64>) -> Result<Array2<f64>, LearnError> {
    concatenate(Axis(1), &[s.view(), a.view()]).map_err(|e| LearnError::Shape(e.to_string()))
}

/// `coef * |a - a'|^2` per row.
pub fn penalties(a: ArrayView2<'_, f64>, a_prime: ArrayView2<'_, f64>, coef: f64) -> Vec<f64> {
    a.rows()
        .into_iter()
        .zip(a_prime.rows())
        .map(|(x, y)| coef * x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>())
        .collect()
}

/// Elementwise minimum of two critics' outputs.
pub fn min_q(q1: &Mlp, q2: &Mlp, s: ArrayView2<'_, f64>, a: ArrayView2<'_, f64>) -> Result<Vec<f64>, LearnError> {
    let x = state_action(s, a)?;
    let v1 = q1.forward(x.view())?;
    let v2 = q2.forward(x.view())?;
    Ok(v1.iter().zip(v2.iter()).map(|(a, b)| a.min(*b)).collect())
}

/// `mean (Q(s, a) - y)^2` and its parameter gradient.
pub fn critic_loss_grad(
    q: &Mlp,
    s: ArrayView2<'_, f64>,
    a: ArrayView2<'_, f64>,
    y: &[f64],
) -> Result<(f64, Vec<f64>), LearnError> {
    let x = state_action(s, a)?;
    let (out, cache) = q.forward_cached(x.view())?;
    let b = y.len() as f64;
    let mut dy = Array2::zeros((y.len(), 1));
    let mut loss = 0.0;
    for i in 0..y.len() {
        let e = out[(i, 0)] - y[i];
        loss += e * e / b;
        dy[(i, 0)] = 2.0 * e / b;
    }
    let (g, _) = q.backward(&cache, dy.view())?;
    Ok((loss, g))
}

/// Gradient of `mean min(Q1, Q2)(s, a)` with respect to `a`, plus the values.
fn min_q_action_grad(
    q1: &Mlp,
    q2: &Mlp,
    s: ArrayView2<'_, f64>,
    a: ArrayView2<'_, f64>,
) -> Result<(Vec<f64>, Array2<f64>), LearnError> {
    let x = state_action(s, a)?;
    let (o1, c1) = q1.forward_cached(x.view())?;
    let (o2, c2) = q2.forward_cached(x.view())?;
    let n = x.nrows();
    let mut d1 = Array2::zeros((n, 1));
    let mut d2 = Array2::zeros((n, 1));
    let mut vals = Vec::with_capacity(n);
    for i in 0..n {
        // Ties go to the first critic.
        if o1[(i, 0)] <= o2[(i, 0)] {
            d1[(i, 0)] = 1.0;
            vals.push(o1[(i, 0)]);
        } else {
            d2[(i, 0)] = 1.0;
            vals.push(o2[(i, 0)]);
        }
    }
    let (_, g1) = q1.backward(&c1, d1.view())?;
    let (_, g2) = q2.backward(&c2, d2.view())?;
    let sd = s.ncols();
    let grad = &g1.slice(s![.., sd..]) + &g2.slice(s![.., sd..]);
    Ok((vals, grad))
}

/// `-mean[min(Q1, Q2)(s, pi(s)) - alpha |a - pi(s)|^2]` for a deterministic tanh actor.
///
/// With `alpha = 0` this is the IQL deterministic actor objective.
pub fn deterministic_actor_loss_grad(
    actor: &Mlp,
    q1: &Mlp,
    q2: &Mlp,
    squash: &Squash,
    s: ArrayView2<'_, f64>,
    a: ArrayView2<'_, f64>,
    alpha: f64,
) -> Result<(f64, Vec<f64>), LearnError> {
    let (u, cache) = actor.forward_cached(s)?;
    let pi = squash.apply(&u);
    let (vals, dq) = min_q_action_grad(q1, q2, s, pi.view())?;
    let b = s.nrows() as f64;
    let diff = &pi - &a;
    let bc: f64 = diff.iter().map(|d| d * d).sum::<f64>() / b;
    let loss = -vals.iter().sum::<f64>() / b + alpha * bc;
    let dpi = dq * (-1.0 / b) + &diff * (2.0 * alpha / b);
    let du = dpi * &squash.jacobian(&u);
    let (g, _) = actor.backward(&cache, du.view())?;
    Ok((loss, g))
}

/// `mean L_tau(qmin - V(s))` and its parameter gradient.
pub fn value_loss_grad(v: &Mlp, s: ArrayView2<'_, f64>, qmin: &[f64], tau: f64) -> Result<(f64, Vec<f64>), LearnError> {
    let (out, cache) = v.forward_cached(s)?;
    let b = qmin.len() as f64;
    let mut dy = Array2::zeros((qmin.len(), 1));
    let mut loss = 0.0;
    for i in 0..qmin.len() {
        let x = qmin[i] - out[(i, 0)];
        loss += expectile_loss(x, tau) / b;
        dy[(i, 0)] = -expectile_grad(x, tau) / b;
    }
    let (g, _) = v.backward(&cache, dy.view())?;
    Ok((loss, g))
}

/// Splits a stochastic actor's output into mean and clamped log-std.
pub fn gaussian_head(out: &Array2<f64>, action_dim: usize) -> (Array2<f64>, Array2<f64>) {
    let mean = out.slice(s![.., ..action_dim]).to_owned();
    let log_std = out.slice(s![.., action_dim..]).mapv(|x| x.clamp(LOG_STD_MIN, LOG_STD_MAX));
    (mean, log_std)
}

/// `-mean[min(Q1, Q2)(s, a') - alpha log pi(a'|s)]` with `a'` reparameterized
/// from standard normal draws `eps` through a tanh-Gaussian.
pub fn stochastic_actor_loss_grad(
    actor: &Mlp,
    q1: &Mlp,
    q2: &Mlp,
    squash: &Squash,
    s: ArrayView2<'_, f64>,
    eps: ArrayView2<'_, f64>,
    alpha: f64,
) -> Result<(f64, Vec<f64>), LearnError> {
    let ad = eps.ncols();
    let (out, cache) = actor.forward_cached(s)?;
    if out.ncols() != 2 * ad {
        return Err(LearnError::Shape("stochastic actor must output mean and log-std".into()));
    }
    let (mean, log_std) = gaussian_head(&out, ad);
    let std = log_std.mapv(f64::exp);
    let u = &mean + &(&std * &eps);
    let pi = squash.apply(&u);
    let (vals, dq) = min_q_action_grad(q1, q2, s, pi.view())?;
    let b = s.nrows() as f64;
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let mut log_prob_sum = 0.0;
    for i in 0..u.nrows() {
        for k in 0..ad {
            let e = eps[(i, k)];
            log_prob_sum +=
                -0.5 * e * e - log_std[(i, k)] - half_log_2pi - squash.half[k].ln() - log_one_minus_tanh_sq(u[(i, k)]);
        }
    }
    let loss = -vals.iter().sum::<f64>() / b + alpha * log_prob_sum / b;
    let du_q = (dq * (-1.0 / b)) * &squash.jacobian(&u);
    let mut dout = Array2::zeros(out.raw_dim());
    for i in 0..u.nrows() {
        for k in 0..ad {
            let t = u[(i, k)].tanh();
            let se = std[(i, k)] * eps[(i, k)];
            dout[(i, k)] = du_q[(i, k)] + alpha / b * 2.0 * t;
            let raw = out[(i, ad + k)];
            if raw > LOG_STD_MIN && raw < LOG_STD_MAX {
                dout[(i, ad + k)] = du_q[(i, k)] * se + alpha / b * (-1.0 + 2.0 * t * se);
            }
        }
    }
    let (g, _) = actor.backward(&cache, dout.view())?;
    Ok((loss, g))
}

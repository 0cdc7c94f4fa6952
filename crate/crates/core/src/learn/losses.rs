//! Scalar losses and the tanh-Gaussian policy density.

use std::f64::consts::{LN_2, PI};

/// Asymmetric squared loss `|tau - 1[x < 0]| x^2`.
pub fn expectile_loss(x: f64, tau: f64) -> f64 {
    expectile_weight(x, tau) * x * x
}

/// Derivative of [`expectile_loss`] in `x`.
pub fn expectile_grad(x: f64, tau: f64) -> f64 {
    2.0 * expectile_weight(x, tau) * x
}

fn expectile_weight(x: f64, tau: f64) -> f64 {
    if x < 0.0 {
        1.0 - tau
    } else {
        tau
    }
}

/// `log(1 - tanh(u)^2)` without cancellation for large `|u|`.
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (LN_2 - u - softplus(-2.0 * u))
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Log-density of `a = center + half * tanh(u)`, `u ~ N(mean, exp(log_std)^2)`, per dimension summed.
///
/// Takes the pre-squash sample `u` so the density stays finite at the box edge.
pub fn tanh_gaussian_log_prob(u: &[f64], mean: &[f64], log_std: &[f64], half: &[f64]) -> f64 {
    let mut lp = 0.0;
    for k in 0..u.len() {
        let z = (u[k] - mean[k]) * (-log_std[k]).exp();
        lp += -0.5 * z * z - log_std[k] - 0.5 * (2.0 * PI).ln() - half[k].ln() - log_one_minus_tanh_sq(u[k]);
    }
    lp
}

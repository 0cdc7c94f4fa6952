//! Action-noise kernels `q_sigma(a' | a)`.
//!
//! Four families are supported:
//!
//! * `Gaussian`: `a + sigma * eps`, `eps ~ N(0, I)`.
//! * `Laplace`: per-dimension Laplace with scale `b = sigma / sqrt(2)`, so the
//!   per-dimension variance is `sigma^2` and it can be compared against a
//!   Gaussian of equal variance.
//! * `UniformMix`: at level `t = sigma`, uniform over the action box with
//!   probability `min(t, 1)`, otherwise Gaussian at scale `t`.
//! * `Hybrid`: `lambda ~ U(log sigma, 0)`, `t = exp(lambda)`, then `UniformMix`
//!   at level `t`. Here `sigma` is an overall noise level in `(0, 1]`, not a
//!   standard deviation. Its density is the `lambda`-average, evaluated with
//!   Gauss–Legendre quadrature.
//!
//! Gaussian components are never truncated to the box, so samples may fall
//! outside it and densities integrate to one over the whole real line.

mod quadrature;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use quadrature::gauss_legendre;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Default number of quadrature nodes over `lambda` for the hybrid density.
pub const DEFAULT_QUADRATURE_NODES: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum NoiseError {
    #[error("action box is invalid: {0}")]
    InvalidBox(String),
    #[error("sigma must be positive and finite (hybrid: in (0, 1]), got {0}")]
    InvalidSigma(f64),
    #[error("quadrature_nodes must be positive")]
    InvalidQuadrature,
    #[error("action has non-finite entries")]
    NonFinite,
    #[error("action dimension {got} does not match box dimension {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("action lies outside the action box")]
    OutsideBox,
    #[error("{0} is only defined for Gaussian and Laplace kernels")]
    UnsupportedFamily(&'static str),
    #[error("unknown noise family `{0}`")]
    UnknownFamily(String),
    #[error("noise config: {0}")]
    Config(String),
}

/// Axis-aligned action box `[low, high]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxRepr", into = "BoxRepr")]
pub struct ActionBox {
    low: Vec<f64>,
    high: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxRepr {
    low: Vec<f64>,
    high: Vec<f64>,
}

impl TryFrom<BoxRepr> for ActionBox {
    type Error = NoiseError;
    fn try_from(r: BoxRepr) -> Result<Self, NoiseError> {
        ActionBox::new(r.low, r.high)
    }
}

impl From<ActionBox> for BoxRepr {
    fn from(b: ActionBox) -> Self {
        BoxRepr { low: b.low, high: b.high }
    }
}

impl ActionBox {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self, NoiseError> {
        if low.is_empty() {
            return Err(NoiseError::InvalidBox("zero-dimensional".into()));
        }
        if low.len() != high.len() {
            return Err(NoiseError::InvalidBox(format!("bound lengths differ ({} vs {})", low.len(), high.len())));
        }
        for (i, (l, h)) in low.iter().zip(&high).enumerate() {
            if !l.is_finite() || !h.is_finite() || l >= h {
                return Err(NoiseError::InvalidBox(format!("dimension {i}: [{l}, {h}]")));
            }
        }
        Ok(ActionBox { low, high })
    }

    /// The box `[-half_width, half_width]^dim`.
    pub fn symmetric(dim: usize, half_width: f64) -> Result<Self, NoiseError> {
        ActionBox::new(vec![-half_width; dim], vec![half_width; dim])
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn low(&self) -> &[f64] {
        &self.low
    }

    pub fn high(&self) -> &[f64] {
        &self.high
    }

    pub fn volume(&self) -> f64 {
        self.low.iter().zip(&self.high).map(|(l, h)| h - l).product()
    }

    pub fn contains(&self, a: &[f64]) -> bool {
        a.len() == self.dim() && a.iter().zip(self.low.iter().zip(&self.high)).all(|(x, (l, h))| *l <= *x && *x <= *h)
    }

    /// `true` when `other` lies inside `self`.
    pub fn encloses(&self, other: &ActionBox) -> bool {
        self.dim() == other.dim()
            && self.low.iter().zip(&other.low).all(|(a, b)| a <= b)
            && self.high.iter().zip(&other.high).all(|(a, b)| a >= b)
    }

    pub fn clip(&self, a: &mut [f64]) {
        for (x, (l, h)) in a.iter_mut().zip(self.low.iter().zip(&self.high)) {
            *x = x.clamp(*l, *h);
        }
    }

    pub fn center(&self) -> Vec<f64> {
        self.low.iter().zip(&self.high).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    pub fn half_widths(&self) -> Vec<f64> {
        self.low.iter().zip(&self.high).map(|(l, h)| 0.5 * (h - l)).collect()
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.low.iter().zip(&self.high).map(|(l, h)| rng.gen_range(*l..*h)).collect()
    }

    fn log_uniform_density(&self, a: &[f64]) -> f64 {
        if self.contains(a) {
            -self.volume().ln()
        } else {
            f64::NEG_INFINITY
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    Gaussian,
    Laplace,
    UniformMix,
    Hybrid,
}

impl NoiseFamily {
    pub fn name(self) -> &'static str {
        match self {
            NoiseFamily::Gaussian => "gaussian",
            NoiseFamily::Laplace => "laplace",
            NoiseFamily::UniformMix => "uniform_mix",
            NoiseFamily::Hybrid => "hybrid",
        }
    }
}

impl fmt::Display for NoiseFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseFamily {
    type Err = NoiseError;
    fn from_str(s: &str) -> Result<Self, NoiseError> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "gaussian" => Ok(NoiseFamily::Gaussian),
            "laplace" => Ok(NoiseFamily::Laplace),
            "uniform_mix" | "uniformmix" => Ok(NoiseFamily::UniformMix),
            "hybrid" => Ok(NoiseFamily::Hybrid),
            other => Err(NoiseError::UnknownFamily(other.to_string())),
        }
    }
}

/// A parameterized noise distribution over the action box.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    family: NoiseFamily,
    sigma: f64,
    bounds: ActionBox,
    quadrature_nodes: usize,
    // Cached Gauss–Legendre rule mapped onto [log sigma, 0]: (t_k, ln weight_k).
    levels: Vec<(f64, f64)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseConfigBlock {
    family: NoiseFamily,
    sigma: f64,
    low: Vec<f64>,
    high: Vec<f64>,
    #[serde(default = "default_nodes")]
    quadrature_nodes: usize,
}

fn default_nodes() -> usize {
    DEFAULT_QUADRATURE_NODES
}

impl NoiseSpec {
    pub fn new(family: NoiseFamily, sigma: f64, bounds: ActionBox) -> Result<Self, NoiseError> {
        Self::with_nodes(family, sigma, bounds, DEFAULT_QUADRATURE_NODES)
    }

    pub fn with_nodes(
        family: NoiseFamily,
        sigma: f64,
        bounds: ActionBox,
        quadrature_nodes: usize,
    ) -> Result<Self, NoiseError> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(NoiseError::InvalidSigma(sigma));
        }
        if family == NoiseFamily::Hybrid && sigma > 1.0 {
            return Err(NoiseError::InvalidSigma(sigma));
        }
        if quadrature_nodes == 0 {
            return Err(NoiseError::InvalidQuadrature);
        }
        let levels = if family == NoiseFamily::Hybrid { hybrid_levels(sigma, quadrature_nodes) } else { Vec::new() };
        Ok(NoiseSpec { family, sigma, bounds, quadrature_nodes, levels })
    }

    /// Constructs a spec from `log sigma`, the parameterization used by sweeps.
    pub fn from_log_sigma(family: NoiseFamily, log_sigma: f64, bounds: ActionBox) -> Result<Self, NoiseError> {
        Self::new(family, log_sigma.exp(), bounds)
    }

    pub fn family(&self) -> NoiseFamily {
        self.family
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn bounds(&self) -> &ActionBox {
        &self.bounds
    }

    pub fn quadrature_nodes(&self) -> usize {
        self.quadrature_nodes
    }

    /// Per-dimension variance of the Gaussian/Laplace kernels.
    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma
    }

    fn check_action(&self, a: &[f64]) -> Result<(), NoiseError> {
        if a.len() != self.bounds.dim() {
            return Err(NoiseError::DimMismatch { expected: self.bounds.dim(), got: a.len() });
        }
        if a.iter().any(|x| !x.is_finite()) {
            return Err(NoiseError::NonFinite);
        }
        Ok(())
    }

    fn check_center(&self, a: &[f64]) -> Result<(), NoiseError> {
        self.check_action(a)?;
        if !self.bounds.contains(a) {
            return Err(NoiseError::OutsideBox);
        }
        Ok(())
    }

    /// Draws `a' ~ q_sigma(. | a)`.
    pub fn sample<R: Rng + ?Sized>(&self, a: &[f64], rng: &mut R) -> Result<Vec<f64>, NoiseError> {
        self.check_center(a)?;
        Ok(self.sample_unchecked(a, rng))
    }

    pub(crate) fn sample_unchecked<R: Rng + ?Sized>(&self, a: &[f64], rng: &mut R) -> Vec<f64> {
        match self.family {
            NoiseFamily::Gaussian => gaussian_sample(a, self.sigma, rng),
            NoiseFamily::Laplace => {
                let b = self.sigma / std::f64::consts::SQRT_2;
                a.iter().map(|x| x + laplace_standard(rng) * b).collect()
            }
            NoiseFamily::UniformMix => self.uniform_mix_sample(a, self.sigma, rng),
            NoiseFamily::Hybrid => {
                let log_sigma = self.sigma.ln();
                let lambda = if log_sigma < 0.0 { rng.gen_range(log_sigma..=0.0) } else { 0.0 };
                self.uniform_mix_sample(a, lambda.exp(), rng)
            }
        }
    }

    fn uniform_mix_sample<R: Rng + ?Sized>(&self, a: &[f64], t: f64, rng: &mut R) -> Vec<f64> {
        let alpha = t.min(1.0);
        if rng.gen::<f64>() < alpha {
            self.bounds.sample_uniform(rng)
        } else {
            gaussian_sample(a, t, rng)
        }
    }

    /// `log q_sigma(a_prime | a)`. Never NaN; `-inf` only where the density is
    /// exactly zero (outside the box for a pure-uniform kernel).
    pub fn log_density(&self, a_prime: &[f64], a: &[f64]) -> Result<f64, NoiseError> {
        self.check_center(a)?;
        self.check_action(a_prime)?;
        Ok(self.log_density_unchecked(a_prime, a))
    }

    pub(crate) fn log_density_unchecked(&self, a_prime: &[f64], a: &[f64]) -> f64 {
        match self.family {
            NoiseFamily::Gaussian => gaussian_log_density(a_prime, a, self.sigma),
            NoiseFamily::Laplace => laplace_log_density(a_prime, a, self.sigma / std::f64::consts::SQRT_2),
            NoiseFamily::UniformMix => self.uniform_mix_log_density(a_prime, a, self.sigma),
            NoiseFamily::Hybrid => {
                let terms: Vec<f64> =
                    self.levels.iter().map(|(t, lw)| lw + self.uniform_mix_log_density(a_prime, a, *t)).collect();
                log_sum_exp(&terms)
            }
        }
    }

    fn uniform_mix_log_density(&self, a_prime: &[f64], a: &[f64], t: f64) -> f64 {
        let alpha = t.min(1.0);
        let log_u = self.bounds.log_uniform_density(a_prime);
        if alpha >= 1.0 {
            return log_u;
        }
        let log_g = gaussian_log_density(a_prime, a, t);
        log_sum_exp(&[alpha.ln() + log_u, (1.0 - alpha).ln() + log_g])
    }

    pub fn density(&self, a_prime: &[f64], a: &[f64]) -> Result<f64, NoiseError> {
        self.log_density(a_prime, a).map(f64::exp)
    }

    /// `q_sigma(a | a1) / q_sigma(a | a2)`, evaluated in log space.
    ///
    /// Restricted to the Gaussian and Laplace kernels. The Laplace kernel is a
    /// per-dimension product, so it orders points by L1 rather than L2
    /// distance once `dim > 1`.
    pub fn limit_ratio(&self, a: &[f64], a1: &[f64], a2: &[f64]) -> Result<f64, NoiseError> {
        self.log_limit_ratio(a, a1, a2).map(f64::exp)
    }

    /// Logarithm of [`NoiseSpec::limit_ratio`]; stays finite where the ratio underflows.
    pub fn log_limit_ratio(&self, a: &[f64], a1: &[f64], a2: &[f64]) -> Result<f64, NoiseError> {
        if !matches!(self.family, NoiseFamily::Gaussian | NoiseFamily::Laplace) {
            return Err(NoiseError::UnsupportedFamily("limit_ratio"));
        }
        self.check_action(a)?;
        self.check_action(a1)?;
        self.check_action(a2)?;
        let l1 = self.log_density_unchecked(a, a1);
        let l2 = self.log_density_unchecked(a, a2);
        Ok(l1 - l2)
    }

    /// Renders the spec as a `key = value` configuration block.
    pub fn to_config_block(&self) -> String {
        let block = NoiseConfigBlock {
            family: self.family,
            sigma: self.sigma,
            low: self.bounds.low.clone(),
            high: self.bounds.high.clone(),
            quadrature_nodes: self.quadrature_nodes,
        };
        toml::to_string(&block).expect("noise config block is always serializable")
    }

    pub fn from_config_block(text: &str) -> Result<Self, NoiseError> {
        let block: NoiseConfigBlock = toml::from_str(text).map_err(|e| NoiseError::Config(e.to_string()))?;
        let bounds = ActionBox::new(block.low, block.high)?;
        NoiseSpec::with_nodes(block.family, block.sigma, bounds, block.quadrature_nodes)
    }
}

fn hybrid_levels(sigma: f64, nodes: usize) -> Vec<(f64, f64)> {
    let log_sigma = sigma.ln();
    if log_sigma >= 0.0 {
        return vec![(1.0, 0.0)];
    }
    let (x, w) = gauss_legendre(nodes);
    let mid = 0.5 * log_sigma;
    let half = -0.5 * log_sigma;
    x.iter().zip(&w).map(|(xi, wi)| ((mid + half * xi).exp(), (0.5 * wi).ln())).collect()
}

fn gaussian_sample<R: Rng + ?Sized>(a: &[f64], scale: f64, rng: &mut R) -> Vec<f64> {
    a.iter()
        .map(|x| {
            let e: f64 = rng.sample(StandardNormal);
            x + scale * e
        })
        .collect()
}

/// Standard Laplace (unit scale) by inverse CDF.
fn laplace_standard<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.gen::<f64>() - 0.5;
    let m = 1.0 - 2.0 * u.abs();
    // gen::<f64>() is in [0, 1), so m lies in (0, 1].
    -u.signum() * m.ln()
}

fn gaussian_log_density(x: &[f64], mean: &[f64], scale: f64) -> f64 {
    let d = x.len() as f64;
    let sq: f64 = x.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
    -0.5 * d * (LN_2PI + 2.0 * scale.ln()) - sq / (2.0 * scale * scale)
}

fn laplace_log_density(x: &[f64], mean: &[f64], b: f64) -> f64 {
    let d = x.len() as f64;
    let l1: f64 = x.iter().zip(mean).map(|(a, c)| (a - c).abs()).sum();
    -d * (2.0 * b).ln() - l1 / b
}

/// Numerically stable `log(sum(exp(x)))`; `-inf` for empty or all `-inf` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if m == f64::INFINITY {
        return f64::INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

//! Single-state toy datasets: the two-action bandit, Rings and Pinwheel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DatasetError, DatasetSource, StateKeyMode, Transition, TransitionDataset};
use crate::noise::ActionBox;

/// Two terminal transitions from a single state: `a = -1` pays 0, `a = +1` pays 1.
///
/// The box is `[-1.5, 1.5]` so grids extend past the data on both sides.
pub fn gen_bandit1d() -> TransitionDataset {
    let bounds = ActionBox::symmetric(1, 1.5).expect("static box");
    let transitions = [(-1.0, 0.0), (1.0, 1.0)]
        .into_iter()
        .map(|(a, r)| Transition { s: vec![0.0], a: vec![a], r, s2: vec![0.0], done: true })
        .collect();
    TransitionDataset::new(transitions, bounds, StateKeyMode::Exact)
        .expect("static dataset")
        .with_source(DatasetSource::Bandit1d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RingsParams {
    pub n_rings: usize,
    pub points_per_ring: usize,
    pub radii: Vec<f64>,
    pub ring_rewards: Vec<f64>,
    pub jitter: f64,
    pub seed: u64,
}

impl Default for RingsParams {
    fn default() -> Self {
        RingsParams {
            n_rings: 3,
            points_per_ring: 128,
            radii: vec![0.3, 0.6, 0.9],
            ring_rewards: vec![1.0, 0.5, 0.0],
            jitter: 0.02,
            seed: 0,
        }
    }
}

/// Concentric rings of 2-D actions in the unit box; each point earns its ring's reward.
///
/// Angles are uniform, positions get isotropic Gaussian jitter and are then
/// clipped to the box.
pub fn gen_rings(params: &RingsParams) -> Result<TransitionDataset, DatasetError> {
    if params.radii.len() != params.n_rings || params.ring_rewards.len() != params.n_rings {
        return Err(DatasetError::InvalidParams("radii and ring_rewards must have n_rings entries".into()));
    }
    if params.n_rings == 0 || params.points_per_ring == 0 {
        return Err(DatasetError::InvalidParams("need at least one ring and one point".into()));
    }
    if params.radii.iter().any(|r| !(r.is_finite() && *r >= 0.0 && *r <= 1.0)) {
        return Err(DatasetError::InvalidParams("ring radii must lie in [0, 1]".into()));
    }
    if !(params.jitter.is_finite() && params.jitter >= 0.0) {
        return Err(DatasetError::InvalidParams("jitter must be nonnegative".into()));
    }
    let bounds = ActionBox::symmetric(2, 1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut transitions = Vec::with_capacity(params.n_rings * params.points_per_ring);
    for (radius, reward) in params.radii.iter().zip(&params.ring_rewards) {
        for _ in 0..params.points_per_ring {
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            let mut a = vec![radius * theta.cos(), radius * theta.sin()];
            if params.jitter > 0.0 {
                for x in a.iter_mut() {
                    let e: f64 = rng.sample(StandardNormal);
                    *x += params.jitter * e;
                }
            }
            bounds.clip(&mut a);
            transitions.push(Transition { s: vec![0.0], a, r: *reward, s2: vec![0.0], done: true });
        }
    }
    Ok(TransitionDataset::new(transitions, bounds, StateKeyMode::Exact)?
        .with_source(DatasetSource::Rings(params.clone())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PinwheelParams {
    pub n_arms: usize,
    pub points_per_arm: usize,
    pub seed: u64,
}

impl Default for PinwheelParams {
    fn default() -> Self {
        PinwheelParams { n_arms: 5, points_per_arm: 128, seed: 0 }
    }
}

const PINWHEEL_RADIAL_STD: f64 = 0.3;
const PINWHEEL_TANGENTIAL_STD: f64 = 0.05;
const PINWHEEL_RATE: f64 = 0.25;
const PINWHEEL_SCALE: f64 = 0.45;

/// The classic pinwheel: radial Gaussian blobs swirled by an angle that grows
/// with radius, scaled into the unit box and clipped. Arm `k` pays
/// `k / (n_arms - 1)`.
pub fn gen_pinwheel(params: &PinwheelParams) -> Result<TransitionDataset, DatasetError> {
    if params.n_arms < 2 {
        return Err(DatasetError::InvalidParams("pinwheel needs at least two arms".into()));
    }
    if params.points_per_arm == 0 {
        return Err(DatasetError::InvalidParams("points_per_arm must be positive".into()));
    }
    let bounds = ActionBox::symmetric(2, 1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut transitions = Vec::with_capacity(params.n_arms * params.points_per_arm);
    for arm in 0..params.n_arms {
        let base = std::f64::consts::TAU * arm as f64 / params.n_arms as f64;
        let reward = arm as f64 / (params.n_arms - 1) as f64;
        for _ in 0..params.points_per_arm {
            let e0: f64 = rng.sample(StandardNormal);
            let e1: f64 = rng.sample(StandardNormal);
            let radial = 1.0 + PINWHEEL_RADIAL_STD * e0;
            let tangential = PINWHEEL_TANGENTIAL_STD * e1;
            let angle = base + PINWHEEL_RATE * radial.exp();
            let (s, c) = angle.sin_cos();
            let mut a =
                vec![PINWHEEL_SCALE * (radial * c + tangential * s), PINWHEEL_SCALE * (-radial * s + tangential * c)];
            bounds.clip(&mut a);
            transitions.push(Transition { s: vec![0.0], a, r: reward, s2: vec![0.0], done: true });
        }
    }
    Ok(TransitionDataset::new(transitions, bounds, StateKeyMode::Exact)?
        .with_source(DatasetSource::Pinwheel(params.clone())))
}

use serde::{Deserialize, Serialize};

use super::LearnError;
use crate::noise::{ActionBox, NoiseFamily, NoiseSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "td3an")]
    Td3An,
    #[serde(rename = "iqlan")]
    IqlAn,
}

impl std::str::FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "td3an" => Ok(Algorithm::Td3An),
            "iqlan" => Ok(Algorithm::IqlAn),
            _ => Err(format!("unknown algorithm `{s}` (expected td3an or iqlan)")),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::Td3An => "td3an",
            Algorithm::IqlAn => "iqlan",
        })
    }
}

/// Training hyperparameters. Defaults follow the published settings; the network
/// shape defaults to 3 hidden layers of 256 units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub gamma: f64,
    /// Target update rate.
    pub polyak: f64,
    pub lr: f64,
    pub batch: usize,
    pub steps: u64,
    pub noise_family: NoiseFamily,
    pub log_sigma: f64,
    /// When false, critics train at dataset actions (`a' = a`).
    pub inject_noise: bool,
    /// Scale on `|a - a'|^2`; 1 is the method as published.
    pub penalty_coef: f64,
    pub expectile_tau: f64,
    /// Behavior-cloning weight in the TD3 actor objective.
    pub bc_alpha: f64,
    pub policy_noise: f64,
    pub noise_clip: f64,
    pub policy_delay: u64,
    pub stochastic_actor: bool,
    pub actor_entropy_alpha: f64,
    pub hidden_dim: usize,
    pub hidden_layers: usize,
    pub layer_norm: bool,
    pub seed: u64,
    /// Steps between metric rows.
    pub log_interval: u64,
    pub eval_episodes: usize,
    /// Monte Carlo samples for the OOD-overestimation metric; 0 disables it.
    pub ood_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            algorithm: Algorithm::Td3An,
            gamma: 0.99,
            polyak: 5e-3,
            lr: 1e-3,
            batch: 256,
            steps: 1_000_000,
            noise_family: NoiseFamily::Hybrid,
            log_sigma: -5.0,
            inject_noise: true,
            penalty_coef: 1.0,
            expectile_tau: 0.7,
            bc_alpha: 0.0,
            policy_noise: 0.2,
            noise_clip: 0.5,
            policy_delay: 2,
            stochastic_actor: false,
            actor_entropy_alpha: 0.3,
            hidden_dim: 256,
            hidden_layers: 3,
            layer_norm: true,
            seed: 0,
            log_interval: 1000,
            eval_episodes: 10,
            ood_samples: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |m: &str| Err(LearnError::Config(m.into()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.polyak > 0.0 && self.polyak <= 1.0) {
            return bad("polyak must lie in (0, 1]");
        }
        if !(self.expectile_tau > 0.0 && self.expectile_tau < 1.0) {
            return bad("expectile_tau must lie in (0, 1)");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.batch == 0 || self.policy_delay == 0 || self.hidden_dim == 0 || self.log_interval == 0 {
            return bad("batch, policy_delay, hidden_dim and log_interval must be positive");
        }
        if !(self.bc_alpha >= 0.0 && self.actor_entropy_alpha >= 0.0 && self.penalty_coef >= 0.0) {
            return bad("bc_alpha, actor_entropy_alpha and penalty_coef must be nonnegative");
        }
        if !(self.policy_noise >= 0.0 && self.noise_clip >= 0.0) {
            return bad("policy_noise and noise_clip must be nonnegative");
        }
        if !self.log_sigma.is_finite() {
            return bad("log_sigma must be finite");
        }
        if self.stochastic_actor && self.algorithm == Algorithm::Td3An {
            return bad("the stochastic actor is only available for iqlan");
        }
        Ok(())
    }

    /// The action-noise kernel over `bounds`, or `None` when injection is off.
    pub fn noise_spec(&self, bounds: &ActionBox) -> Result<Option<NoiseSpec>, LearnError> {
        if !self.inject_noise {
            return Ok(None);
        }
        Ok(Some(NoiseSpec::from_log_sigma(self.noise_family, self.log_sigma, bounds.clone())?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_settings() {
        let c = TrainConfig::default();
        assert_eq!((c.lr, c.batch, c.gamma, c.polyak), (1e-3, 256, 0.99, 5e-3));
        assert_eq!((c.policy_noise, c.noise_clip, c.policy_delay), (0.2, 0.5, 2));
        assert_eq!((c.hidden_dim, c.hidden_layers, c.layer_norm, c.expectile_tau), (256, 3, true, 0.7));
        assert_eq!(c.steps, 1_000_000);
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_unknown_keys() {
        let c = TrainConfig { algorithm: Algorithm::IqlAn, log_sigma: -10.0, ..TrainConfig::default() };
        let text = toml::to_string(&c).unwrap();
        assert!(text.contains("algorithm = \"iqlan\""));
        assert_eq!(toml::from_str::<TrainConfig>(&text).unwrap(), c);
        assert!(toml::from_str::<TrainConfig>("learning_rate = 0.1").is_err());
        assert_eq!(toml::from_str::<TrainConfig>("batch = 32").unwrap().batch, 32);
    }

    #[test]
    fn invalid_values_rejected() {
        for c in [
            TrainConfig { gamma: 1.0, ..TrainConfig::default() },
            TrainConfig { polyak: 0.0, ..TrainConfig::default() },
            TrainConfig { expectile_tau: 1.0, ..TrainConfig::default() },
            TrainConfig { stochastic_actor: true, ..TrainConfig::default() },
        ] {
            assert!(c.validate().is_err());
        }
    }

    #[test]
    fn algorithm_names() {
        assert_eq!("TD3-AN".parse::<Algorithm>().unwrap(), Algorithm::Td3An);
        assert_eq!("iql_an".parse::<Algorithm>().unwrap(), Algorithm::IqlAn);
        assert!("sac".parse::<Algorithm>().is_err());
    }
}

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::{agent_ood_probability, evaluate_policy};
use super::{Agent, LearnError, TrainConfig};
use crate::dataset::{Simulator, TransitionDataset};

/// Interval-averaged losses and diagnostics. Absent values are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub critic_loss: f64,
    pub actor_loss: Option<f64>,
    pub value_loss: Option<f64>,
    /// Mean discounted return of the deterministic actor.
    pub eval_return: Option<f64>,
    pub ood_probability: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub agent: Agent,
    pub metrics: Vec<MetricsRow>,
}

#[derive(Default)]
struct Accum {
    critic: (f64, u64),
    actor: (f64, u64),
    value: (f64, u64),
}

fn mean((sum, n): (f64, u64)) -> Option<f64> {
    (n > 0).then(|| sum / n as f64)
}

/// Runs the offline training loop for `config.steps` steps.
///
/// Training, evaluation rollouts and the OOD estimate draw from separate streams
/// seeded from `config.seed`, so logging never changes the learned parameters.
pub fn train(
    dataset: &TransitionDataset,
    config: &TrainConfig,
    mut sim: Option<&mut dyn Simulator>,
    on_row: &mut dyn FnMut(&MetricsRow),
) -> Result<TrainOutcome, LearnError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut eval_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut ood_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));
    let mut agent = Agent::new(config, dataset.state_dim(), dataset.bounds().clone(), &mut rng)?;
    let spec = config.noise_spec(dataset.bounds())?;
    let mut metrics = Vec::new();
    let mut acc = Accum::default();
    for t in 1..=config.steps {
        let r = agent.train_step(t, dataset, config, spec.as_ref(), &mut rng)?;
        acc.critic.0 += r.critic_loss;
        acc.critic.1 += 1;
        if let Some(l) = r.actor_loss {
            acc.actor.0 += l;
            acc.actor.1 += 1;
        }
        if let Some(l) = r.value_loss {
            acc.value.0 += l;
            acc.value.1 += 1;
        }
        if t % config.log_interval == 0 || t == config.steps {
            let eval_return = match sim.as_deref_mut() {
                Some(sim) if config.eval_episodes > 0 => {
                    let mut policy = |s: &[f64]| agent.act(s).expect("state dimension checked at construction");
                    Some(evaluate_policy(sim, &mut policy, config.eval_episodes, &mut eval_rng).discounted)
                }
                _ => None,
            };
            let ood_probability = if config.ood_samples > 0 {
                Some(agent_ood_probability(&agent, dataset, config.ood_samples, &mut ood_rng)?.probability)
            } else {
                None
            };
            let row = MetricsRow {
                step: t,
                critic_loss: mean(acc.critic).unwrap_or(f64::NAN),
                actor_loss: mean(acc.actor),
                value_loss: mean(acc.value),
                eval_return,
                ood_probability,
            };
            on_row(&row);
            metrics.push(row);
            acc = Accum::default();
        }
    }
    Ok(TrainOutcome { agent, metrics })
}

pub const METRICS_CSV_HEADER: &str = "step,critic_loss,actor_loss,value_loss,eval_return,ood_probability";

fn cell(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

impl MetricsRow {
    /// One CSV line matching [`METRICS_CSV_HEADER`]; absent values are empty cells.
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step,
            self.critic_loss,
            cell(self.actor_loss),
            cell(self.value_loss),
            cell(self.eval_return),
            cell(self.ood_probability)
        )
    }
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], mut out: W) -> Result<(), LearnError> {
    writeln!(out, "{METRICS_CSV_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.csv_line())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{gen_chain_env, ChainParams};
    use crate::learn::Algorithm;

    fn cfg(algorithm: Algorithm) -> TrainConfig {
        TrainConfig {
            algorithm,
            hidden_dim: 8,
            hidden_layers: 2,
            batch: 16,
            steps: 20,
            log_interval: 7,
            eval_episodes: 2,
            ood_samples: 50,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let (mut env, d) = gen_chain_env(&ChainParams::default()).unwrap();
        for alg in [Algorithm::Td3An, Algorithm::IqlAn] {
            let a = train(&d, &cfg(alg), Some(&mut env), &mut |_| {}).unwrap();
            let b = train(&d, &cfg(alg), None, &mut |_| {}).unwrap();
            assert_eq!(a.agent.actor(), b.agent.actor());
            assert_eq!(a.agent.critics(), b.agent.critics());
            let c = train(&d, &TrainConfig { seed: 1, ..cfg(alg) }, None, &mut |_| {}).unwrap();
            assert_ne!(a.agent.actor(), c.agent.actor());
        }
    }

    #[test]
    fn rows_at_intervals_and_final_step() {
        let (mut env, d) = gen_chain_env(&ChainParams::default()).unwrap();
        let mut seen = Vec::new();
        let out = train(&d, &cfg(Algorithm::Td3An), Some(&mut env), &mut |r| seen.push(r.step)).unwrap();
        assert_eq!(seen, vec![7, 14, 20]);
        assert_eq!(out.metrics.len(), 3);
        assert!(out.metrics.iter().all(|r| r.eval_return.is_some() && r.ood_probability.is_some()));
        assert!(out.metrics.iter().all(|r| r.value_loss.is_none()));
        let mut buf = Vec::new();
        write_metrics_csv(&out.metrics, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().nth(1).unwrap().starts_with("7,"));
    }

    #[test]
    fn divergence_is_reported() {
        let (_, d) = gen_chain_env(&ChainParams::default()).unwrap();
        let c = TrainConfig { lr: 1e300, ..cfg(Algorithm::Td3An) };
        assert!(matches!(train(&d, &c, None, &mut |_| {}), Err(LearnError::Diverged { .. })));
    }
}

use ndarray::{Array2, ArrayView2};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};

use super::objectives::{
    critic_loss_grad, deterministic_actor_loss_grad, gaussian_head, min_q, penalties, stochastic_actor_loss_grad,
    value_loss_grad, Squash,
};
use super::{Adam, Algorithm, LearnError, Mlp, TrainConfig};
use crate::dataset::TransitionDataset;
use crate::noise::{ActionBox, NoiseSpec};

/// A uniformly resampled minibatch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub s: Array2<f64>,
    pub a: Array2<f64>,
    pub r: Vec<f64>,
    pub s2: Array2<f64>,
    /// 1.0 for terminal transitions.
    pub done: Vec<f64>,
}

impl Batch {
    pub fn from_indices(dataset: &TransitionDataset, idx: &[usize]) -> Self {
        let (sd, ad) = (dataset.state_dim(), dataset.action_dim());
        let t = dataset.transitions();
        Batch {
            s: Array2::from_shape_fn((idx.len(), sd), |(i, k)| t[idx[i]].s[k]),
            a: Array2::from_shape_fn((idx.len(), ad), |(i, k)| t[idx[i]].a[k]),
            r: idx.iter().map(|&i| t[i].r).collect(),
            s2: Array2::from_shape_fn((idx.len(), sd), |(i, k)| t[idx[i]].s2[k]),
            done: idx.iter().map(|&i| if t[i].done { 1.0 } else { 0.0 }).collect(),
        }
    }

    /// `n` transitions drawn uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(dataset: &TransitionDataset, n: usize, rng: &mut R) -> Self {
        let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..dataset.len())).collect();
        Self::from_indices(dataset, &idx)
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Update {
    Value,
    Critic,
    Actor,
    Targets,
}

/// Losses from one training step, and which updates ran in what order.
#[derive(Debug, Clone, Default)]
pub struct StepReport {
    pub critic_loss: f64,
    pub actor_loss: Option<f64>,
    pub value_loss: Option<f64>,
    pub updates: Vec<Update>,
}

/// Actor, twin critics, targets and (for IQL-AN) a state-value network.
#[derive(Debug, Clone)]
pub struct Agent {
    pub(crate) algorithm: Algorithm,
    pub(crate) stochastic: bool,
    pub(crate) state_dim: usize,
    pub(crate) bounds: ActionBox,
    pub(crate) actor: Mlp,
    pub(crate) actor_target: Mlp,
    pub(crate) q1: Mlp,
    pub(crate) q2: Mlp,
    pub(crate) q1_target: Mlp,
    pub(crate) q2_target: Mlp,
    pub(crate) value: Option<Mlp>,
    adam_actor: Adam,
    adam_q1: Adam,
    adam_q2: Adam,
    adam_value: Option<Adam>,
}

fn hidden_dims(input: usize, output: usize, config: &TrainConfig) -> Vec<usize> {
    let mut d = vec![input];
    d.extend(std::iter::repeat_n(config.hidden_dim, config.hidden_layers));
    d.push(output);
    d
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(
        config: &TrainConfig,
        state_dim: usize,
        bounds: ActionBox,
        rng: &mut R,
    ) -> Result<Self, LearnError> {
        config.validate()?;
        let ad = bounds.dim();
        let actor_out = if config.stochastic_actor { 2 * ad } else { ad };
        let ln = config.layer_norm;
        let actor = Mlp::new(&hidden_dims(state_dim, actor_out, config), ln, rng)?;
        let q1 = Mlp::new(&hidden_dims(state_dim + ad, 1, config), ln, rng)?;
        let q2 = Mlp::new(&hidden_dims(state_dim + ad, 1, config), ln, rng)?;
        let value = match config.algorithm {
            Algorithm::IqlAn => Some(Mlp::new(&hidden_dims(state_dim, 1, config), ln, rng)?),
            Algorithm::Td3An => None,
        };
        Ok(Agent {
            algorithm: config.algorithm,
            stochastic: config.stochastic_actor,
            state_dim,
            adam_actor: Adam::new(actor.n_params()),
            adam_q1: Adam::new(q1.n_params()),
            adam_q2: Adam::new(q2.n_params()),
            adam_value: value.as_ref().map(|v| Adam::new(v.n_params())),
            actor_target: actor.clone(),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            bounds,
            actor,
            q1,
            q2,
            value,
        })
    }

    pub(crate) fn from_parts(
        algorithm: Algorithm,
        bounds: ActionBox,
        nets: [Mlp; 6],
        value: Option<Mlp>,
    ) -> Result<Self, LearnError> {
        let [actor, actor_target, q1, q2, q1_target, q2_target] = nets;
        let ad = bounds.dim();
        let state_dim = actor.input_dim();
        let stochastic = actor.output_dim() == 2 * ad && algorithm == Algorithm::IqlAn;
        if q1.input_dim() != state_dim + ad || (actor.output_dim() != ad && !stochastic) {
            return Err(LearnError::Shape("network dimensions disagree with the action box".into()));
        }
        Ok(Agent {
            algorithm,
            stochastic,
            state_dim,
            adam_actor: Adam::new(actor.n_params()),
            adam_q1: Adam::new(q1.n_params()),
            adam_q2: Adam::new(q2.n_params()),
            adam_value: value.as_ref().map(|v| Adam::new(v.n_params())),
            bounds,
            actor,
            actor_target,
            q1,
            q2,
            q1_target,
            q2_target,
            value,
        })
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn bounds(&self) -> &ActionBox {
        &self.bounds
    }

    pub fn is_stochastic(&self) -> bool {
        self.stochastic
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn actor_target(&self) -> &Mlp {
        &self.actor_target
    }

    pub fn critics(&self) -> (&Mlp, &Mlp) {
        (&self.q1, &self.q2)
    }

    pub fn target_critics(&self) -> (&Mlp, &Mlp) {
        (&self.q1_target, &self.q2_target)
    }

    pub fn value_net(&self) -> Option<&Mlp> {
        self.value.as_ref()
    }

    pub fn squash(&self) -> Squash {
        Squash { center: self.bounds.center(), half: self.bounds.half_widths() }
    }

    fn actions_of(&self, net: &Mlp, s: ArrayView2<'_, f64>) -> Result<Array2<f64>, LearnError> {
        let out = net.forward(s)?;
        let u = if self.stochastic { gaussian_head(&out, self.action_dim()).0 } else { out };
        Ok(self.squash().apply(&u))
    }

    /// Deterministic actions (the tanh of the mean for a stochastic actor).
    pub fn act_batch(&self, s: ArrayView2<'_, f64>) -> Result<Array2<f64>, LearnError> {
        self.actions_of(&self.actor, s)
    }

    pub fn act(&self, s: &[f64]) -> Result<Vec<f64>, LearnError> {
        let s = ArrayView2::from_shape((1, s.len()), s).map_err(|e| LearnError::Shape(e.to_string()))?;
        Ok(self.act_batch(s)?.into_raw_vec_and_offset().0)
    }

    /// `min(Q1, Q2)(s, a)` row by row with the online critics.
    pub fn q_min_batch(&self, s: ArrayView2<'_, f64>, a: ArrayView2<'_, f64>) -> Result<Vec<f64>, LearnError> {
        min_q(&self.q1, &self.q2, s, a)
    }

    pub fn q_min(&self, s: &[f64], a: &[f64]) -> Result<f64, LearnError> {
        let sv = ArrayView2::from_shape((1, s.len()), s).map_err(|e| LearnError::Shape(e.to_string()))?;
        let av = ArrayView2::from_shape((1, a.len()), a).map_err(|e| LearnError::Shape(e.to_string()))?;
        Ok(self.q_min_batch(sv, av)?[0])
    }

    /// Noised actions `a' ~ q_sigma(. | a)`; the dataset actions themselves when `spec` is `None`.
    pub fn noised_actions<R: Rng + ?Sized>(a: &Array2<f64>, spec: Option<&NoiseSpec>, rng: &mut R) -> Array2<f64> {
        match spec {
            None => a.clone(),
            Some(spec) => {
                let mut out = a.clone();
                for mut row in out.rows_mut() {
                    let x = spec.sample_unchecked(&row.to_vec(), rng);
                    row.assign(&ndarray::ArrayView1::from(&x));
                }
                out
            }
        }
    }

    /// Target smoothing noise `clip(N(0, policy_noise), -c, c)` per action coordinate.
    pub fn target_noise<R: Rng + ?Sized>(n: usize, ad: usize, config: &TrainConfig, rng: &mut R) -> Array2<f64> {
        Array2::from_shape_fn((n, ad), |_| {
            let e: f64 = StandardNormal.sample(rng);
            (config.policy_noise * e).clamp(-config.noise_clip, config.noise_clip)
        })
    }

    /// Penalized TD3 targets `r - coef |a - a'|^2 + gamma (1 - done) min Q'(s', clip(pi'(s') + eps))`.
    pub fn td3_targets(
        &self,
        batch: &Batch,
        a_prime: &Array2<f64>,
        target_eps: &Array2<f64>,
        config: &TrainConfig,
    ) -> Result<Vec<f64>, LearnError> {
        let mut next = self.actions_of(&self.actor_target, batch.s2.view())? + target_eps;
        let (lo, hi) = (self.bounds.low(), self.bounds.high());
        for ((_, k), x) in next.indexed_iter_mut() {
            *x = x.clamp(lo[k], hi[k]);
        }
        let q_next = min_q(&self.q1_target, &self.q2_target, batch.s2.view(), next.view())?;
        let pen = penalties(batch.a.view(), a_prime.view(), config.penalty_coef);
        Ok((0..batch.len()).map(|i| batch.r[i] - pen[i] + config.gamma * (1.0 - batch.done[i]) * q_next[i]).collect())
    }

    /// Penalized IQL targets `r - coef |a - a'|^2 + gamma (1 - done) V(s')`.
    pub fn iql_targets(
        &self,
        batch: &Batch,
        a_prime: &Array2<f64>,
        config: &TrainConfig,
    ) -> Result<Vec<f64>, LearnError> {
        let v = self.value.as_ref().ok_or_else(|| LearnError::Config("agent has no value network".into()))?;
        let v_next = Mlp::column(&v.forward(batch.s2.view())?);
        let pen = penalties(batch.a.view(), a_prime.view(), config.penalty_coef);
        Ok((0..batch.len()).map(|i| batch.r[i] - pen[i] + config.gamma * (1.0 - batch.done[i]) * v_next[i]).collect())
    }

    /// One Adam step on both critics toward `y` at `(s, a')`; returns the mean of their losses.
    pub fn critic_step(
        &mut self,
        s: &Array2<f64>,
        a_prime: &Array2<f64>,
        y: &[f64],
        lr: f64,
    ) -> Result<f64, LearnError> {
        let (l1, g1) = critic_loss_grad(&self.q1, s.view(), a_prime.view(), y)?;
        let (l2, g2) = critic_loss_grad(&self.q2, s.view(), a_prime.view(), y)?;
        self.adam_q1.step(self.q1.params_mut(), &g1, lr);
        self.adam_q2.step(self.q2.params_mut(), &g2, lr);
        Ok(0.5 * (l1 + l2))
    }

    pub fn td3_critic_update(
        &mut self,
        batch: &Batch,
        a_prime: &Array2<f64>,
        target_eps: &Array2<f64>,
        config: &TrainConfig,
    ) -> Result<f64, LearnError> {
        let y = self.td3_targets(batch, a_prime, target_eps, config)?;
        self.critic_step(&batch.s, a_prime, &y, config.lr)
    }

    /// Deterministic actor step against the target critics with behavior-cloning weight `alpha`.
    pub fn deterministic_actor_update(&mut self, batch: &Batch, alpha: f64, lr: f64) -> Result<f64, LearnError> {
        let (loss, g) = deterministic_actor_loss_grad(
            &self.actor,
            &self.q1_target,
            &self.q2_target,
            &self.squash(),
            batch.s.view(),
            batch.a.view(),
            alpha,
        )?;
        self.adam_actor.step(self.actor.params_mut(), &g, lr);
        Ok(loss)
    }

    pub fn stochastic_actor_update(
        &mut self,
        batch: &Batch,
        eps: &Array2<f64>,
        alpha: f64,
        lr: f64,
    ) -> Result<f64, LearnError> {
        let (loss, g) = stochastic_actor_loss_grad(
            &self.actor,
            &self.q1_target,
            &self.q2_target,
            &self.squash(),
            batch.s.view(),
            eps.view(),
            alpha,
        )?;
        self.adam_actor.step(self.actor.params_mut(), &g, lr);
        Ok(loss)
    }

    /// Expectile regression of `V(s)` toward `min Q'(s, a)` at dataset actions.
    pub fn iql_value_update(&mut self, batch: &Batch, config: &TrainConfig) -> Result<f64, LearnError> {
        let qmin = min_q(&self.q1_target, &self.q2_target, batch.s.view(), batch.a.view())?;
        let v = self.value.as_mut().ok_or_else(|| LearnError::Config("agent has no value network".into()))?;
        let (loss, g) = value_loss_grad(v, batch.s.view(), &qmin, config.expectile_tau)?;
        let adam = self.adam_value.as_mut().expect("value optimizer exists with value net");
        adam.step(v.params_mut(), &g, config.lr);
        Ok(loss)
    }

    pub fn iql_critic_update(
        &mut self,
        batch: &Batch,
        a_prime: &Array2<f64>,
        config: &TrainConfig,
    ) -> Result<f64, LearnError> {
        let y = self.iql_targets(batch, a_prime, config)?;
        self.critic_step(&batch.s, a_prime, &y, config.lr)
    }

    /// Polyak-averages all target networks toward the online ones.
    pub fn update_targets(&mut self, eta: f64) {
        self.q1_target.polyak_from(&self.q1, eta);
        self.q2_target.polyak_from(&self.q2, eta);
        self.actor_target.polyak_from(&self.actor, eta);
    }

    /// One iteration of the training loop at step `t` (1-based).
    pub fn train_step(
        &mut self,
        t: u64,
        dataset: &TransitionDataset,
        config: &TrainConfig,
        spec: Option<&NoiseSpec>,
        rng: &mut dyn RngCore,
    ) -> Result<StepReport, LearnError> {
        let batch = Batch::sample(dataset, config.batch, rng);
        let a_prime = Self::noised_actions(&batch.a, spec, rng);
        let mut report = StepReport::default();
        match self.algorithm {
            Algorithm::Td3An => {
                let eps = Self::target_noise(batch.len(), self.action_dim(), config, rng);
                report.critic_loss = self.td3_critic_update(&batch, &a_prime, &eps, config)?;
                report.updates.push(Update::Critic);
                if t.is_multiple_of(config.policy_delay) {
                    report.actor_loss = Some(self.deterministic_actor_update(&batch, config.bc_alpha, config.lr)?);
                    report.updates.push(Update::Actor);
                    self.update_targets(config.polyak);
                    report.updates.push(Update::Targets);
                }
            }
            Algorithm::IqlAn => {
                report.value_loss = Some(self.iql_value_update(&batch, config)?);
                report.updates.push(Update::Value);
                report.critic_loss = self.iql_critic_update(&batch, &a_prime, config)?;
                report.updates.push(Update::Critic);
                let actor_loss = if self.stochastic {
                    let eps = Array2::from_shape_fn((batch.len(), self.action_dim()), |_| StandardNormal.sample(rng));
                    self.stochastic_actor_update(&batch, &eps, config.actor_entropy_alpha, config.lr)?
                } else {
                    self.deterministic_actor_update(&batch, 0.0, config.lr)?
                };
                report.actor_loss = Some(actor_loss);
                report.updates.push(Update::Actor);
                self.update_targets(config.polyak);
                report.updates.push(Update::Targets);
            }
        }
        let finite = report.critic_loss.is_finite()
            && report.actor_loss.is_none_or(f64::is_finite)
            && report.value_loss.is_none_or(f64::is_finite);
        if !finite {
            return Err(LearnError::Diverged { step: t });
        }
        Ok(report)
    }
}

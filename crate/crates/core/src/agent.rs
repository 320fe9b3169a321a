//! DDPG agent with novelty-weighted updates.
//!
//! The actor maps `observation ‖ goal` to a tanh action; the critic scores
//! `observation ‖ goal ‖ action`. TD targets come from slow-moving target
//! copies of both networks and never propagate gradients. Per-sample weights
//! in `[1, 3]` multiply both the critic's squared TD error and the actor's
//! negated value, so a weight of w has the same pre-optimizer effect as
//! updating that sample w times.
//!
//! Weight modes cover the method and its ablations: novelty weights, all-ones
//! (the plain DDPG-HER baseline), the batch mean of the novelty weights, and
//! normal draws matching the novelty weights' mean and spread.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::envs::GoalObservation;
use crate::error::{Error, Result};
use crate::net::{Gradients, LossKind, Network, OutputActivation};
use crate::novelty::{normalize_and_clamp, NoveltyEstimator, WEIGHT_MAX, WEIGHT_MIN};
use crate::replay::{goal_conditioned_input, ReplayBuffer, TransitionBatch};
use crate::seeding::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Clamped standardized novelty per state.
    Nsr,
    /// All ones; the unweighted DDPG-HER baseline.
    Uniform,
    /// Every state gets the batch mean of the novelty weights.
    Mean,
    /// I.i.d. normal draws with the novelty weights' mean and std, clamped.
    Random,
}

impl WeightMode {
    pub fn name(&self) -> &'static str {
        match self {
            WeightMode::Nsr => "nsr",
            WeightMode::Uniform => "uniform",
            WeightMode::Mean => "mean",
            WeightMode::Random => "random",
        }
    }
}

impl fmt::Display for WeightMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WeightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<WeightMode> {
        match s {
            "nsr" => Ok(WeightMode::Nsr),
            "uniform" => Ok(WeightMode::Uniform),
            "mean" => Ok(WeightMode::Mean),
            "random" => Ok(WeightMode::Random),
            other => Err(Error::InvalidArgument(format!(
                "unknown weight mode '{other}' (expected nsr, uniform, mean, or random)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub obs_dim: usize,
    pub goal_dim: usize,
    pub action_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub rnd_lr: f64,
    pub action_noise_std: f64,
    /// Fraction of exploration episodes that use uniform random actions.
    pub random_episode_prob: f64,
    /// Coefficient of the per-sample action-magnitude penalty in the actor
    /// loss. Keeps the tanh head out of saturation; 0 disables it.
    pub action_l2: f64,
    pub weight_mode: WeightMode,
    pub reuse_count: usize,
    pub batch_size: usize,
    pub future_k: f64,
}

impl AgentConfig {
    pub fn new(obs_dim: usize, goal_dim: usize, action_dim: usize) -> AgentConfig {
        AgentConfig {
            obs_dim,
            goal_dim,
            action_dim,
            hidden_dim: 64,
            embed_dim: 32,
            gamma: 0.98,
            tau: 0.05,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            rnd_lr: 1e-3,
            action_noise_std: 0.1,
            random_episode_prob: 0.2,
            action_l2: 1.0,
            weight_mode: WeightMode::Nsr,
            reuse_count: 1,
            batch_size: 128,
            future_k: 4.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut violations = Vec::new();
        self.collect_violations(&mut violations);
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(violations))
        }
    }

    pub(crate) fn collect_violations(&self, out: &mut Vec<String>) {
        if self.obs_dim == 0 || self.goal_dim == 0 || self.action_dim == 0 {
            out.push("agent dims must be >= 1".into());
        }
        if self.hidden_dim == 0 || self.embed_dim == 0 {
            out.push("hidden_dim and embed_dim must be >= 1".into());
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            out.push(format!("gamma must be in (0, 1), got {}", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            out.push(format!("tau must be in (0, 1], got {}", self.tau));
        }
        for (name, lr) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("rnd_lr", self.rnd_lr),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                out.push(format!("{name} must be > 0, got {lr}"));
            }
        }
        if !(self.action_noise_std >= 0.0 && self.action_noise_std.is_finite()) {
            out.push(format!("action_noise_std must be >= 0, got {}", self.action_noise_std));
        }
        if !(0.0..=1.0).contains(&self.random_episode_prob) {
            out.push(format!(
                "random_episode_prob must be in [0, 1], got {}",
                self.random_episode_prob
            ));
        }
        if !(self.action_l2 >= 0.0 && self.action_l2.is_finite()) {
            out.push(format!("action_l2 must be >= 0, got {}", self.action_l2));
        }
        if self.reuse_count < 1 {
            out.push("reuse_count must be >= 1".into());
        }
        if self.batch_size < 1 {
            out.push("batch_size must be >= 1".into());
        }
        if !(self.future_k >= 0.0) {
            out.push(format!("future_k must be >= 0, got {}", self.future_k));
        }
    }

    fn input_dim(&self) -> usize {
        self.obs_dim + self.goal_dim
    }
}

/// Losses and weight statistics of one update step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateMetrics {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub mean_weight: f64,
    pub rnd_loss: f64,
}

/// Pre-optimizer gradients of one weighted update, before any Adam step.
#[derive(Clone, Debug)]
pub struct UpdateGradients {
    pub critic: Gradients,
    pub actor: Gradients,
    pub critic_loss: f64,
    pub actor_loss: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Agent {
    pub actor: Network,
    pub critic: Network,
    pub target_actor: Network,
    pub target_critic: Network,
    pub novelty: NoveltyEstimator,
    pub config: AgentConfig,
}

impl Agent {
    /// Builds actor, critic, their target copies, and the novelty estimator
    /// from seeds derived from `seed`. Targets start equal to their sources.
    pub fn new(config: &AgentConfig, seed: u64) -> Result<Agent> {
        config.validate()?;
        let input = config.input_dim();
        let h = config.hidden_dim;
        let actor = Network::init(
            &[input, h, h, h, config.action_dim],
            derive_seed(seed, 0),
            OutputActivation::Tanh,
        )?;
        let critic = Network::init(
            &[input + config.action_dim, h, h, h, 1],
            derive_seed(seed, 1),
            OutputActivation::Identity,
        )?;
        let novelty = NoveltyEstimator::new(input, h, config.embed_dim, derive_seed(seed, 2))?;
        Ok(Agent {
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            novelty,
            config: config.clone(),
        })
    }

    /// Deterministic actor action; Gaussian noise added and re-clamped to
    /// `[-1, 1]` when exploring. Consumes no randomness when `explore` is
    /// false or the noise std is zero.
    pub fn select_action<R: Rng>(&self, obs: &GoalObservation, explore: bool, rng: &mut R) -> Vec<f64> {
        let input = goal_conditioned_input(obs);
        let mut action = self
            .actor
            .forward(&input)
            .expect("observation dims must match the agent's dims");
        if explore && self.config.action_noise_std > 0.0 {
            let noise = Normal::new(0.0, self.config.action_noise_std)
                .expect("validated noise std");
            for a in &mut action {
                *a = (*a + noise.sample(rng)).clamp(-1.0, 1.0);
            }
        }
        action
    }

    /// Uniform action in `[-1, 1]^action_dim` for random exploration episodes.
    pub fn random_action<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.config.action_dim)
            .map(|_| rng.gen_range(-1.0..=1.0))
            .collect()
    }

    /// Per-sample update weights for a batch of goal-conditioned state
    /// inputs, according to the configured weight mode. Always in `[1, 3]`.
    pub fn compute_weights<R: Rng>(&self, states: &[Vec<f64>], rng: &mut R) -> Result<Vec<f64>> {
        if states.is_empty() {
            return Err(Error::InvalidArgument("state batch must be nonempty".into()));
        }
        match self.config.weight_mode {
            WeightMode::Uniform => Ok(vec![1.0; states.len()]),
            WeightMode::Nsr => normalize_and_clamp(&self.novelty.novelty_mse(states)?),
            WeightMode::Mean => {
                let nsr = normalize_and_clamp(&self.novelty.novelty_mse(states)?)?;
                let mean = nsr.iter().sum::<f64>() / nsr.len() as f64;
                Ok(vec![mean; nsr.len()])
            }
            WeightMode::Random => {
                let nsr = normalize_and_clamp(&self.novelty.novelty_mse(states)?)?;
                let n = nsr.len() as f64;
                let mean = nsr.iter().sum::<f64>() / n;
                let std = (nsr.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / n).sqrt();
                if std <= 0.0 {
                    return Ok(vec![mean; nsr.len()]);
                }
                let normal = Normal::new(mean, std).expect("finite mean and std");
                Ok(nsr
                    .iter()
                    .map(|_| normal.sample(rng).clamp(WEIGHT_MIN, WEIGHT_MAX))
                    .collect())
            }
        }
    }

    fn validate_update_inputs(&self, batch: &TransitionBatch, weights: &[f64]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("batch must be nonempty".into()));
        }
        let n = batch.len();
        if batch.actions.len() != n
            || batch.rewards.len() != n
            || batch.next_states.len() != n
            || batch.terminals.len() != n
        {
            return Err(Error::InvalidArgument("batch arrays have unequal lengths".into()));
        }
        if weights.len() != n {
            return Err(Error::InvalidArgument(format!(
                "{} weights for a batch of {n}",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NumericInput("weights contain NaN or infinity".into()));
        }
        if weights.iter().any(|w| *w < WEIGHT_MIN || *w > WEIGHT_MAX) {
            return Err(Error::ContractViolation(format!(
                "update weights must lie in [{WEIGHT_MIN}, {WEIGHT_MAX}]"
            )));
        }
        if batch.rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::NumericInput("rewards contain NaN or infinity".into()));
        }
        for a in &batch.actions {
            if a.len() != self.config.action_dim {
                return Err(Error::InvalidArgument(format!(
                    "action length {} does not match action dim {}",
                    a.len(),
                    self.config.action_dim
                )));
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericInput("actions contain NaN or infinity".into()));
            }
        }
        Ok(())
    }

    /// TD targets `y_i = r_i + gamma * (1 - terminal_i) * Q'(s'_i, mu'(s'_i))`
    /// from the target networks; no gradient ever flows through them.
    ///
    /// Targets are clipped to `[-1/(1-gamma), 0]`, the feasible return range
    /// for the sparse {-1, 0} reward, which keeps the critic from drifting
    /// outside values any trajectory can realize.
    pub fn td_targets(&self, batch: &TransitionBatch) -> Result<Vec<f64>> {
        let next_inputs = batch.next_state_inputs();
        let return_floor = -1.0 / (1.0 - self.config.gamma);
        let mut targets = Vec::with_capacity(batch.len());
        for (i, ns) in next_inputs.iter().enumerate() {
            let next_action = self.target_actor.forward(ns)?;
            let mut critic_in = ns.clone();
            critic_in.extend_from_slice(&next_action);
            let next_q = self.target_critic.forward(&critic_in)?[0];
            let mask = if batch.terminals[i] { 0.0 } else { 1.0 };
            let y = batch.rewards[i] + self.config.gamma * mask * next_q;
            targets.push(y.clamp(return_floor, 0.0));
        }
        Ok(targets)
    }

    /// Gradients of the weighted critic and actor losses at the current
    /// parameters, without applying them.
    ///
    /// Critic: `mean_i w_i * (Q(s_i, a_i) - y_i)^2` with `y` held constant.
    /// Actor: `mean_i w_i * (-Q(s_i, mu(s_i)) + action_l2 * mean_d mu(s_i)_d^2)`,
    /// gradients flowing through `mu` only — the critic's parameter gradients
    /// from this term are discarded. The weight multiplies the whole
    /// per-sample term, so gradients stay linear in the weights.
    pub fn compute_update_gradients(
        &self,
        batch: &TransitionBatch,
        weights: &[f64],
    ) -> Result<UpdateGradients> {
        self.validate_update_inputs(batch, weights)?;
        let n = batch.len();
        let state_inputs = batch.state_inputs();
        let input_dim = self.config.input_dim();

        // critic loss on stored actions against frozen TD targets
        let targets: Vec<Vec<f64>> = self.td_targets(batch)?.into_iter().map(|y| vec![y]).collect();
        let critic_inputs: Vec<Vec<f64>> = state_inputs
            .iter()
            .zip(&batch.actions)
            .map(|(s, a)| {
                let mut x = s.clone();
                x.extend_from_slice(a);
                x
            })
            .collect();
        let (critic_grads, critic_loss) = self.critic.backward_weighted_scalar_loss(
            LossKind::WeightedMse,
            &critic_inputs,
            Some(&targets),
            weights,
        )?;

        // actor loss: chain the critic's input gradient into the actor
        let mut actor_grads = Gradients::zeros_like(&self.actor);
        let mut critic_scratch = Gradients::zeros_like(&self.critic);
        let mut actor_loss = 0.0;
        let action_dim = self.config.action_dim as f64;
        let penalty = self.config.action_l2;
        for (i, s) in state_inputs.iter().enumerate() {
            let actor_trace = self.actor.forward_trace(s)?;
            let action = actor_trace.output().to_vec();
            let mut critic_in = s.clone();
            critic_in.extend_from_slice(&action);
            let critic_trace = self.critic.forward_trace(&critic_in)?;
            let q = critic_trace.output()[0];
            let sq_mean = action.iter().map(|a| a * a).sum::<f64>() / action_dim;
            actor_loss += weights[i] * (-q + penalty * sq_mean);
            let d_q = [-weights[i] / n as f64];
            let d_input =
                self.critic
                    .backward_from_output_grad(&critic_trace, &d_q, &mut critic_scratch)?;
            let mut d_action = d_input[input_dim..].to_vec();
            for (da, a) in d_action.iter_mut().zip(&action) {
                *da += weights[i] * 2.0 * penalty * a / (action_dim * n as f64);
            }
            self.actor
                .backward_from_output_grad(&actor_trace, &d_action, &mut actor_grads)?;
        }
        actor_loss /= n as f64;

        Ok(UpdateGradients {
            critic: critic_grads,
            actor: actor_grads,
            critic_loss,
            actor_loss,
        })
    }

    /// One full update: weighted critic and actor Adam steps (both gradients
    /// evaluated at the pre-update parameters), Polyak updates of both
    /// targets, then one predictor step of the novelty estimator on the same
    /// batch.
    pub fn update(&mut self, batch: &TransitionBatch, weights: &[f64]) -> Result<UpdateMetrics> {
        let grads = self.compute_update_gradients(batch, weights)?;
        self.critic
            .adam_step(&grads.critic, self.config.critic_lr, 0.9, 0.999, 1e-8)?;
        self.actor
            .adam_step(&grads.actor, self.config.actor_lr, 0.9, 0.999, 1e-8)?;
        self.target_critic.soft_update_from(&self.critic, self.config.tau)?;
        self.target_actor.soft_update_from(&self.actor, self.config.tau)?;
        let rnd_loss = self
            .novelty
            .train_predictor(&batch.state_inputs(), self.config.rnd_lr)?;
        let metrics = UpdateMetrics {
            critic_loss: grads.critic_loss,
            actor_loss: grads.actor_loss,
            mean_weight: weights.iter().sum::<f64>() / weights.len() as f64,
            rnd_loss,
        };
        if !(metrics.critic_loss.is_finite()
            && metrics.actor_loss.is_finite()
            && metrics.rnd_loss.is_finite())
        {
            return Err(Error::NumericInput("update produced non-finite losses".into()));
        }
        Ok(metrics)
    }

    /// Samples `n_batches` HER batches and applies `update` to each batch
    /// `reuse_count` times, recomputing weights before every pass (the
    /// predictor trains between passes, so novelty weights drift).
    pub fn update_cycle<R: Rng>(
        &mut self,
        buffer: &ReplayBuffer,
        n_batches: usize,
        rng: &mut R,
    ) -> Result<Vec<UpdateMetrics>> {
        if buffer.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        if n_batches < 1 {
            return Err(Error::InvalidArgument("n_batches must be >= 1".into()));
        }
        let mut metrics = Vec::with_capacity(n_batches * self.config.reuse_count);
        for _ in 0..n_batches {
            let batch = buffer.sample_with_her(self.config.batch_size, self.config.future_k, rng)?;
            let state_inputs = batch.state_inputs();
            for _ in 0..self.config.reuse_count {
                let weights = self.compute_weights(&state_inputs, rng)?;
                metrics.push(self.update(&batch, &weights)?);
            }
        }
        Ok(metrics)
    }

    /// Checkpoint: the four networks, the novelty estimator, and the
    /// hyperparameters, as one JSON document. Round-trips bit-exactly.
    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json_str(json: &str) -> Result<Agent> {
        let agent: Agent = serde_json::from_str(json)?;
        agent.config.validate()?;
        Ok(agent)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Agent> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{EnvSpec, Task, ToyEnv};
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn test_config() -> AgentConfig {
        let mut cfg = AgentConfig::new(3, 3, 3);
        cfg.hidden_dim = 16;
        cfg.embed_dim = 8;
        cfg.batch_size = 8;
        cfg
    }

    fn obs_for(env_seed: u64) -> GoalObservation {
        let spec = EnvSpec::new(Task::Reach);
        let (_, obs) = ToyEnv::reset(&spec, env_seed);
        obs
    }

    fn small_batch(n: usize, seed: u64) -> TransitionBatch {
        let spec = EnvSpec::new(Task::Reach);
        let mut buffer =
            crate::replay::ReplayBuffer::new(16, spec.max_episode_steps, spec.success_threshold)
                .unwrap();
        let mut rng = StdRng::seed_from_u64(seed);
        for s in 0..4 {
            let (mut env, _) = ToyEnv::reset(&spec, s);
            let mut ep = Vec::new();
            while !env.done() {
                let a: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
                ep.push(env.step(&a).unwrap());
            }
            buffer.store_episode(ep).unwrap();
        }
        buffer.sample_with_her(n, 4.0, &mut rng).unwrap()
    }

    #[test]
    fn greedy_action_is_deterministic_and_bounded() {
        let agent = Agent::new(&test_config(), 0).unwrap();
        let obs = obs_for(1);
        let mut rng = StdRng::seed_from_u64(0);
        let a = agent.select_action(&obs, false, &mut rng);
        let b = agent.select_action(&obs, false, &mut rng);
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn zero_noise_exploration_equals_greedy() {
        let mut cfg = test_config();
        cfg.action_noise_std = 0.0;
        let agent = Agent::new(&cfg, 0).unwrap();
        let obs = obs_for(2);
        let mut rng = StdRng::seed_from_u64(0);
        assert_eq!(
            agent.select_action(&obs, true, &mut rng),
            agent.select_action(&obs, false, &mut rng)
        );
    }

    #[test]
    fn uniform_mode_gives_ones() {
        let mut cfg = test_config();
        cfg.weight_mode = WeightMode::Uniform;
        let agent = Agent::new(&cfg, 0).unwrap();
        let mut rng = StdRng::seed_from_u64(0);
        let states = vec![vec![0.1; 6]; 5];
        assert_eq!(agent.compute_weights(&states, &mut rng).unwrap(), vec![1.0; 5]);
    }

    #[test]
    fn mean_mode_is_constant_at_the_nsr_mean() {
        let mut cfg = test_config();
        cfg.weight_mode = WeightMode::Nsr;
        let mut agent = Agent::new(&cfg, 3).unwrap();
        let mut rng = StdRng::seed_from_u64(0);
        let states: Vec<Vec<f64>> = (0..8)
            .map(|i| (0..6).map(|d| (i as f64) * 0.3 + (d as f64) * 0.1).collect())
            .collect();
        let nsr = agent.compute_weights(&states, &mut rng).unwrap();
        let expected = nsr.iter().sum::<f64>() / nsr.len() as f64;
        agent.config.weight_mode = WeightMode::Mean;
        let mean_weights = agent.compute_weights(&states, &mut rng).unwrap();
        assert!(mean_weights.iter().all(|w| (w - expected).abs() < 1e-12));
    }

    #[test]
    fn random_mode_with_zero_spread_is_the_mean() {
        let mut cfg = test_config();
        cfg.weight_mode = WeightMode::Random;
        let mut agent = Agent::new(&cfg, 4).unwrap();
        // identical predictor and target -> all novelties zero -> weights all 1
        agent.novelty.copy_target_into_predictor();
        let mut rng = StdRng::seed_from_u64(0);
        let states = vec![vec![0.2; 6]; 6];
        assert_eq!(agent.compute_weights(&states, &mut rng).unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn update_rejects_out_of_range_weights_and_nan() {
        let mut agent = Agent::new(&test_config(), 0).unwrap();
        let batch = small_batch(4, 9);
        let bad = vec![0.5; 4];
        assert!(matches!(
            agent.update(&batch, &bad),
            Err(Error::ContractViolation(_))
        ));
        let nan = vec![f64::NAN; 4];
        assert!(matches!(agent.update(&batch, &nan), Err(Error::NumericInput(_))));
        let wrong_len = vec![1.0; 3];
        assert!(matches!(
            agent.update(&batch, &wrong_len),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn scalar_td_arithmetic_matches_hand_computation() {
        // 1-dim obs/goal/action, constant networks:
        // critic(s,a) = 0.5 always, target critic = 0.2, reward -1, gamma 0.98
        // y = -1 + 0.98 * 0.2 = -0.804; weight 2 -> loss 2*(0.5+0.804)^2
        let mut cfg = AgentConfig::new(1, 1, 1);
        cfg.hidden_dim = 4;
        cfg.embed_dim = 2;
        cfg.gamma = 0.98;
        let mut agent = Agent::new(&cfg, 0).unwrap();
        let mut critic = Network::init(&[3, 1], 0, OutputActivation::Identity).unwrap();
        critic.set_layer(0, &[0.0, 0.0, 0.0], &[0.5]).unwrap();
        let mut target_critic = Network::init(&[3, 1], 0, OutputActivation::Identity).unwrap();
        target_critic.set_layer(0, &[0.0, 0.0, 0.0], &[0.2]).unwrap();
        agent.critic = critic;
        agent.target_critic = target_critic;

        let obs = GoalObservation {
            observation: vec![0.3],
            achieved_goal: vec![0.3],
            desired_goal: vec![0.9],
        };
        let batch = TransitionBatch {
            states: vec![obs.clone()],
            actions: vec![vec![0.1]],
            rewards: vec![-1.0],
            next_states: vec![obs],
            desired_goals: vec![vec![0.9]],
            terminals: vec![false],
            relabeled: vec![false],
        };
        let y = agent.td_targets(&batch).unwrap()[0];
        assert!((y - -0.804).abs() < 1e-12);
        let grads = agent.compute_update_gradients(&batch, &[2.0]).unwrap();
        let expected = 2.0 * (0.5 - -0.804) * (0.5 - -0.804);
        assert!((grads.critic_loss - expected).abs() < 1e-12);
        assert!((grads.critic_loss - 3.4009).abs() < 1e-4);
    }

    #[test]
    fn unit_weights_match_an_unweighted_reference_update() {
        // reference: the same math written without any weight multiplications
        let agent = Agent::new(&test_config(), 5).unwrap();
        let batch = small_batch(6, 11);
        let weights = vec![1.0; 6];
        let grads = agent.compute_update_gradients(&batch, &weights).unwrap();

        let n = batch.len();
        let targets: Vec<Vec<f64>> = agent
            .td_targets(&batch)
            .unwrap()
            .into_iter()
            .map(|y| vec![y])
            .collect();
        let critic_inputs: Vec<Vec<f64>> = batch
            .state_inputs()
            .iter()
            .zip(&batch.actions)
            .map(|(s, a)| {
                let mut x = s.clone();
                x.extend_from_slice(a);
                x
            })
            .collect();
        let (ref_critic, _) = agent
            .critic
            .backward_weighted_scalar_loss(
                LossKind::WeightedMse,
                &critic_inputs,
                Some(&targets),
                &vec![1.0; n],
            )
            .unwrap();
        assert_eq!(grads.critic.flat(), ref_critic.flat());

        let mut ref_actor = Gradients::zeros_like(&agent.actor);
        let mut scratch = Gradients::zeros_like(&agent.critic);
        let d = agent.config.action_dim as f64;
        let c = agent.config.action_l2;
        for s in batch.state_inputs() {
            let at = agent.actor.forward_trace(&s).unwrap();
            let action = at.output().to_vec();
            let mut ci = s.clone();
            ci.extend_from_slice(&action);
            let ct = agent.critic.forward_trace(&ci).unwrap();
            let d_in = agent
                .critic
                .backward_from_output_grad(&ct, &[-1.0 / n as f64], &mut scratch)
                .unwrap();
            let mut d_a = d_in[6..].to_vec();
            for (g, a) in d_a.iter_mut().zip(&action) {
                *g += 2.0 * c * a / (d * n as f64);
            }
            agent
                .actor
                .backward_from_output_grad(&at, &d_a, &mut ref_actor)
                .unwrap();
        }
        assert_eq!(grads.actor.flat(), ref_actor.flat());
    }

    #[test]
    fn weight_three_scales_gradients_linearly() {
        let agent = Agent::new(&test_config(), 6).unwrap();
        let batch = small_batch(5, 13);
        let g1 = agent.compute_update_gradients(&batch, &vec![1.0; 5]).unwrap();
        let g3 = agent.compute_update_gradients(&batch, &vec![3.0; 5]).unwrap();
        for (a, b) in g1.critic.flat().iter().zip(g3.critic.flat()) {
            let scale = a.abs().max(b.abs()).max(1e-12);
            assert!((3.0 * a - b).abs() / scale < 1e-12);
        }
        for (a, b) in g1.actor.flat().iter().zip(g3.actor.flat()) {
            let scale = a.abs().max(b.abs()).max(1e-12);
            assert!((3.0 * a - b).abs() / scale < 1e-12);
        }
    }

    #[test]
    fn targets_lag_by_exact_polyak_blend() {
        let mut agent = Agent::new(&test_config(), 7).unwrap();
        let batch = small_batch(6, 17);
        let old_target_actor = agent.target_actor.params_flat();
        let old_target_critic = agent.target_critic.params_flat();
        let weights = vec![1.0; 6];
        agent.update(&batch, &weights).unwrap();
        let tau = agent.config.tau;
        for ((t, old), src) in agent
            .target_actor
            .params_flat()
            .iter()
            .zip(&old_target_actor)
            .zip(agent.actor.params_flat())
        {
            assert_eq!(*t, (1.0 - tau) * old + tau * src);
        }
        for ((t, old), src) in agent
            .target_critic
            .params_flat()
            .iter()
            .zip(&old_target_critic)
            .zip(agent.critic.params_flat())
        {
            assert_eq!(*t, (1.0 - tau) * old + tau * src);
        }
    }

    #[test]
    fn td_targets_are_outside_the_gradient_path() {
        let agent = Agent::new(&test_config(), 8).unwrap();
        let batch = small_batch(4, 19);
        let weights = vec![1.5; 4];
        let y = agent.td_targets(&batch).unwrap();

        // perturbing the target critic changes y ...
        let mut perturbed = agent.clone();
        let mut params = perturbed.target_critic.params_flat();
        for p in &mut params {
            *p += 0.05;
        }
        perturbed.target_critic.set_params_flat(&params).unwrap();
        let y2 = perturbed.td_targets(&batch).unwrap();
        assert!(y.iter().zip(&y2).any(|(a, b)| (a - b).abs() > 1e-9));

        // ... but the critic gradient is exactly the gradient of the loss with
        // y held fixed: finite differences over critic params against frozen y
        let grads = agent.compute_update_gradients(&batch, &weights).unwrap();
        let critic_inputs: Vec<Vec<f64>> = batch
            .state_inputs()
            .iter()
            .zip(&batch.actions)
            .map(|(s, a)| {
                let mut x = s.clone();
                x.extend_from_slice(a);
                x
            })
            .collect();
        let loss_at = |net: &Network| -> f64 {
            critic_inputs
                .iter()
                .zip(&y)
                .zip(&weights)
                .map(|((x, yi), w)| {
                    let q = net.forward(x).unwrap()[0];
                    w * (q - yi) * (q - yi)
                })
                .sum::<f64>()
                / batch.len() as f64
        };
        let base = agent.critic.params_flat();
        let analytic = grads.critic.flat();
        let mut work = agent.critic.clone();
        let step = 1e-5;
        let mut checked = 0;
        for p in (0..base.len()).step_by(37) {
            let mut plus = base.clone();
            plus[p] += step;
            work.set_params_flat(&plus).unwrap();
            let up = loss_at(&work);
            let mut minus = base.clone();
            minus[p] -= step;
            work.set_params_flat(&minus).unwrap();
            let down = loss_at(&work);
            let fd = (up - down) / (2.0 * step);
            let scale = fd.abs().max(analytic[p].abs()).max(1e-6);
            assert!(
                (fd - analytic[p]).abs() / scale < 1e-4,
                "param {p}: fd {fd} vs analytic {}",
                analytic[p]
            );
            checked += 1;
        }
        assert!(checked > 10);
    }

    #[test]
    fn update_cycle_counts_and_determinism() {
        let spec = EnvSpec::new(Task::Reach);
        let mut cfg = test_config();
        cfg.batch_size = 16;
        cfg.reuse_count = 3;
        let build = || {
            let mut agent = Agent::new(&cfg, 21).unwrap();
            let mut buffer = crate::replay::ReplayBuffer::new(
                8,
                spec.max_episode_steps,
                spec.success_threshold,
            )
            .unwrap();
            let mut rng = StdRng::seed_from_u64(2);
            for s in 0..3 {
                let (mut env, _) = ToyEnv::reset(&spec, s);
                let mut ep = Vec::new();
                while !env.done() {
                    ep.push(env.step(&agent.random_action(&mut rng)).unwrap());
                }
                buffer.store_episode(ep).unwrap();
            }
            (agent, buffer)
        };
        let (mut a, buf_a) = build();
        let mut rng_a = StdRng::seed_from_u64(33);
        let metrics_a = a.update_cycle(&buf_a, 5, &mut rng_a).unwrap();
        assert_eq!(metrics_a.len(), 5 * 3);

        let (mut b, buf_b) = build();
        let mut rng_b = StdRng::seed_from_u64(33);
        let metrics_b = b.update_cycle(&buf_b, 5, &mut rng_b).unwrap();
        assert_eq!(metrics_a, metrics_b);
        assert_eq!(a.actor.params_flat(), b.actor.params_flat());

        let empty = crate::replay::ReplayBuffer::new(4, 30, 0.05).unwrap();
        assert!(matches!(
            a.update_cycle(&empty, 1, &mut rng_a),
            Err(Error::EmptyBuffer)
        ));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut agent = Agent::new(&test_config(), 31).unwrap();
        let batch = small_batch(6, 23);
        let weights = vec![1.0; 6];
        agent.update(&batch, &weights).unwrap();
        let json = agent.to_json_string().unwrap();
        let loaded = Agent::from_json_str(&json).unwrap();
        assert_eq!(agent.actor, loaded.actor);
        assert_eq!(agent.critic, loaded.critic);
        assert_eq!(agent.target_actor, loaded.target_actor);
        assert_eq!(agent.target_critic, loaded.target_critic);
        assert_eq!(agent.config, loaded.config);
        assert_eq!(json, loaded.to_json_string().unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn prop_actions_always_bounded(seed in 0u64..500, env_seed in 0u64..500) {
            let agent = Agent::new(&test_config(), seed).unwrap();
            let obs = obs_for(env_seed);
            let mut rng = StdRng::seed_from_u64(seed);
            let a = agent.select_action(&obs, true, &mut rng);
            prop_assert!(a.iter().all(|v| v.abs() <= 1.0));
        }

        #[test]
        fn prop_weights_in_bounds_for_every_mode(
            seed in 0u64..200,
            mode in prop_oneof![
                Just(WeightMode::Nsr),
                Just(WeightMode::Uniform),
                Just(WeightMode::Mean),
                Just(WeightMode::Random),
            ],
            n in 1usize..12,
        ) {
            let mut cfg = test_config();
            cfg.weight_mode = mode;
            let agent = Agent::new(&cfg, seed).unwrap();
            let mut rng = StdRng::seed_from_u64(seed);
            let states: Vec<Vec<f64>> = (0..n)
                .map(|i| (0..6).map(|d| (i * 7 + d) as f64 * 0.13 - 1.0).collect())
                .collect();
            let w = agent.compute_weights(&states, &mut rng).unwrap();
            prop_assert_eq!(w.len(), n);
            prop_assert!(w.iter().all(|v| (WEIGHT_MIN..=WEIGHT_MAX).contains(v)));
        }
    }
}

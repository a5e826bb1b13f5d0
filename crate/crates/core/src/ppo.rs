//! Proximal Policy Optimization over single-episode rollouts.
//!
//! One training iteration collects one full episode with the stochastic
//! policy, computes GAE advantages (terminal bootstrap 0, normalised per
//! buffer), then runs several epochs of clipped-surrogate updates over
//! shuffled minibatches. The environment generator is reseeded from
//! `TrainConfig::seeds` every `seed_rotation_period` episodes; in between,
//! episodes continue the current generator stream.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::controllers::{
    feature_scales,
    gaussian_entropy, run_pid_on, run_policy_on, FeatureTracker, MlpPolicy, PidGains, Policy,
    PolicyParams, PolicyVariant, StateVariant, StateVector,
};
use crate::error::{Error, Result};
use crate::gradnet::{Activation, DenseNet, Optimizer, OptimizerKind};
use crate::metrics::{sdf, ImprovementReport, RewardConfig, RewardTracker, SeedReport};
use crate::rng::SimRng;
use crate::spillsim::{EnvConfig, Episode, SpillEnv};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub epochs_per_iter: usize,
    pub minibatch: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub lr: f64,
    pub iterations: usize,
    /// Episodes between reseeding the environment from `seeds`.
    pub seed_rotation_period: usize,
    pub seeds: Vec<u64>,
    /// Seeds network initialisation, action sampling and minibatch order.
    pub master_seed: u64,
    pub optimizer: OptimizerKind,
    pub critic_hidden: Vec<usize>,
    /// Multiplier on the critic's output, so the network works at unit scale
    /// while discounted returns are of order `1 / (1 - gamma)` times a reward.
    pub value_scale: f64,
    /// Hidden sizes of the MLP actor (NN-policy ablation only).
    pub actor_hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            epochs_per_iter: 10,
            minibatch: 64,
            value_coef: 0.5,
            entropy_coef: 0.0,
            lr: 1e-4,
            iterations: 600,
            seed_rotation_period: 1000,
            seeds: (0..9).collect(),
            master_seed: 0,
            optimizer: OptimizerKind::Adam,
            critic_hidden: vec![64, 64],
            value_scale: 100.0,
            actor_hidden: vec![64, 64],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, env: &EnvConfig) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config("gamma", "must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::config("gae_lambda", "must lie in [0, 1]"));
        }
        if !(self.clip_eps > 0.0) {
            return Err(Error::config("clip_eps", "must be positive"));
        }
        if self.minibatch == 0 || self.minibatch > env.steps_per_episode {
            return Err(Error::config("minibatch", "must be in 1..=steps_per_episode"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config("lr", "must be finite and positive"));
        }
        if self.seed_rotation_period == 0 {
            return Err(Error::config("seed_rotation_period", "must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "need at least one seed"));
        }
        if !(self.value_coef.is_finite() && self.entropy_coef.is_finite()) {
            return Err(Error::config("value_coef", "loss coefficients must be finite"));
        }
        Ok(())
    }
}

/// Value network over normalised state features. The network predicts
/// `V / output_scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Critic {
    pub net: DenseNet,
    pub input_scale: Vec<f64>,
    pub output_scale: f64,
}

impl Critic {
    pub fn new(
        variant: StateVariant,
        hidden: &[usize],
        input_scale: Vec<f64>,
        output_scale: f64,
        rng: &mut SimRng,
    ) -> Result<Self> {
        if input_scale.len() != variant.dim() {
            return Err(Error::Shape { expected: variant.dim(), got: input_scale.len() });
        }
        let mut dims = vec![variant.dim()];
        dims.extend_from_slice(hidden);
        dims.push(1);
        Ok(Self {
            net: DenseNet::mlp(&dims, Activation::Tanh, 0.01, rng)?,
            input_scale,
            output_scale,
        })
    }

    fn input(&self, state: &StateVector) -> Result<Vec<f64>> {
        if state.len() != self.input_scale.len() {
            return Err(Error::Shape { expected: self.input_scale.len(), got: state.len() });
        }
        Ok(state.as_slice().iter().zip(&self.input_scale).map(|(x, s)| x / s).collect())
    }

    pub fn value(&self, state: &StateVector) -> Result<f64> {
        Ok(self.output_scale * self.net.predict(&self.input(state)?)?[0])
    }

    /// Add `coeff(V) · ∂V/∂θ` into `acc` and return `V`.
    pub fn accumulate_value_grad(&self, state: &StateVector, coeff_of: impl Fn(f64) -> f64, acc: &mut [f64]) -> Result<f64> {
        let (out, tape) = self.net.forward(&self.input(state)?)?;
        let v = self.output_scale * out[0];
        self.net.backward_into(&tape, &[coeff_of(v) * self.output_scale], acc)?;
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: StateVector,
    /// Action applied to the environment (clamped).
    pub action: f64,
    /// Gaussian draw before clamping; `log_prob` refers to it.
    pub raw_action: f64,
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
}

#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub transitions: Vec<Transition>,
    /// Normalised advantages, filled by [`compute_gae`].
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub episode: Episode,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.transitions.iter().map(|t| t.reward).collect()
    }

    pub fn mean_reward(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.transitions.iter().map(|t| t.reward).sum::<f64>() / self.len() as f64
    }
}

/// Run one full episode with the stochastic policy. Transition `t` holds
/// the state built from `x_0..x_t`, the action decided on it, the reward of
/// `x_t`, and the critic's value estimate.
pub fn collect_rollout(
    env: &mut SpillEnv,
    policy: &Policy,
    critic: &Critic,
    reward_cfg: &RewardConfig,
    rng: &mut SimRng,
) -> Result<RolloutBuffer> {
    if env.t() != 0 {
        return Err(Error::InvalidInput("rollout needs a freshly reset environment".into()));
    }
    reward_cfg.validate()?;
    let cfg = env.config().clone();
    let variant = policy.variant();
    let mut tracker = FeatureTracker::new(&cfg);
    let mut rewards = RewardTracker::new(*reward_cfg, cfg.steps_per_episode);
    let mut transitions = Vec::with_capacity(cfg.steps_per_episode);
    let mut action = 0.0;
    while !env.is_done() {
        let step = env.t();
        let at = |e: Error| Error::AtStep { step, source: Box::new(e) };
        let out = env.step(action).map_err(at)?;
        tracker.observe(out.obs, out.raw);
        let reward = rewards.push((out.obs - cfg.reference).abs());
        let state = tracker.state(variant).map_err(at)?;
        let value = critic.value(&state).map_err(at)?;
        let sample = policy.sample(&state, cfg.action_bound, rng).map_err(at)?;
        tracker.record_action(sample.action);
        transitions.push(Transition {
            state,
            action: sample.action,
            raw_action: sample.raw_action,
            log_prob: sample.log_prob,
            reward,
            value,
            done: out.done,
        });
        action = sample.action;
    }
    Ok(RolloutBuffer {
        transitions,
        advantages: Vec::new(),
        returns: Vec::new(),
        episode: env.episode().clone(),
    })
}

/// Unnormalised GAE: `δ_t = r_t + γ V_{t+1} (1 - done_t) - V_t`,
/// `A_t = δ_t + γλ (1 - done_t) A_{t+1}`, returns `A + V`. The value after
/// the last transition is taken as 0.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_value = 0.0;
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        adv[t] = delta + gamma * lambda * live * next_adv;
        next_value = values[t];
        next_adv = adv[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Shift to zero mean and scale to unit (population) std; a single value or
/// a constant vector maps to zeros.
pub fn normalize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        xs[0] -= mean;
        return;
    }
    let std = libm::sqrt(xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n);
    for x in xs.iter_mut() {
        *x = (*x - mean) / (std + 1e-8);
    }
}

/// Fill the buffer's returns and normalised advantages.
pub fn compute_gae(buffer: &mut RolloutBuffer, gamma: f64, lambda: f64) {
    let rewards = buffer.rewards();
    let values: Vec<f64> = buffer.transitions.iter().map(|t| t.value).collect();
    let dones: Vec<bool> = buffer.transitions.iter().map(|t| t.done).collect();
    let (mut adv, returns) = gae(&rewards, &values, &dones, gamma, lambda);
    normalize(&mut adv);
    buffer.advantages = adv;
    buffer.returns = returns;
}

/// Averages over every minibatch of one `ppo_update` call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub actor_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub minibatches: usize,
}

/// Actor and critic with their optimizers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Learner {
    pub policy: Policy,
    pub critic: Critic,
    /// Typical feature magnitudes measured on the PID baseline.
    pub feature_scale: Vec<f64>,
    pub actor_opt: Optimizer,
    pub critic_opt: Optimizer,
}

impl Learner {
    pub fn new(
        cfg: &TrainConfig,
        env: &EnvConfig,
        gains: &PidGains,
        policy_variant: PolicyVariant,
        state_variant: StateVariant,
    ) -> Result<Self> {
        let mut rng = SimRng::seed_from_u64(cfg.master_seed);
        let mut critic_rng = rng.fork();
        let mut actor_rng = rng.fork();
        let feature_scale = feature_scales(env, &cfg.seeds, gains, state_variant)?;
        let policy = match policy_variant {
            PolicyVariant::NeuralPid => Policy::NeuralPid(PolicyParams::from_pid(gains, state_variant)),
            PolicyVariant::Mlp => Policy::Mlp(MlpPolicy::new(
                state_variant,
                &cfg.actor_hidden,
                feature_scale.clone(),
                &mut actor_rng,
            )?),
        };
        let critic =
            Critic::new(state_variant, &cfg.critic_hidden, feature_scale.clone(), cfg.value_scale, &mut critic_rng)?;
        Ok(Self {
            feature_scale,
            actor_opt: Optimizer::new(cfg.optimizer, policy.num_params(), cfg.lr),
            critic_opt: Optimizer::new(cfg.optimizer, critic.net.num_params(), cfg.lr),
            policy,
            critic,
        })
    }
}

/// Clipped-surrogate PPO epochs over one buffer with advantages.
pub fn ppo_update(
    learner: &mut Learner,
    buffer: &RolloutBuffer,
    cfg: &TrainConfig,
    rng: &mut SimRng,
) -> Result<LossReport> {
    let n = buffer.len();
    if buffer.advantages.len() != n || buffer.returns.len() != n {
        return Err(Error::InvalidInput("buffer has no advantages; run compute_gae first".into()));
    }
    if cfg.minibatch == 0 {
        return Err(Error::config("minibatch", "must be positive"));
    }
    let lr_scales = learner.policy.lr_scales(&learner.feature_scale)?;
    let mut actor_params = learner.policy.params();
    let mut critic_params = learner.critic.net.params();
    let mut report = LossReport::default();
    let mut order: Vec<usize> = (0..n).collect();

    for _ in 0..cfg.epochs_per_iter {
        rng.shuffle(&mut order);
        for batch in order.chunks(cfg.minibatch) {
            let m = batch.len() as f64;
            let mut actor_grad = vec![0.0; actor_params.len()];
            let mut critic_grad = vec![0.0; critic_params.len()];
            let mut actor_loss = 0.0;
            let mut value_loss = 0.0;
            let mut clipped = 0usize;
            for &i in batch {
                let tr = &buffer.transitions[i];
                let adv = buffer.advantages[i];
                let new_log_prob = learner.policy.log_prob(&tr.state, tr.raw_action)?;
                let ratio = libm::exp(new_log_prob - tr.log_prob);
                let surr = ratio * adv;
                let surr_clipped = ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * adv;
                actor_loss -= surr.min(surr_clipped) / m;
                if (ratio - 1.0).abs() > cfg.clip_eps {
                    clipped += 1;
                }
                // The clipped branch is flat in θ; only the unclipped one carries gradient.
                if surr <= surr_clipped {
                    learner.policy.accumulate_log_prob_grad(&tr.state, tr.raw_action, -ratio * adv / m, &mut actor_grad)?;
                }
                let ret = buffer.returns[i];
                let v = learner.critic.accumulate_value_grad(
                    &tr.state,
                    |v| cfg.value_coef * 2.0 * (v - ret) / m,
                    &mut critic_grad,
                )?;
                value_loss += (v - ret) * (v - ret) / m;
            }
            let entropy = gaussian_entropy(learner.policy.log_std());
            *actor_grad.last_mut().unwrap() -= cfg.entropy_coef;
            let total = actor_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy;
            if !total.is_finite() {
                return Err(Error::Diverged {
                    step: learner.actor_opt.step_count(),
                    detail: format!(
                        "loss {total} (actor {actor_loss}, value {value_loss}, entropy {entropy})"
                    ),
                });
            }
            learner.actor_opt.step(&mut actor_params, &actor_grad, Some(&lr_scales))?;
            learner.policy.set_params(&actor_params)?;
            // log_std may have been clamped
            actor_params = learner.policy.params();
            learner.critic_opt.step(&mut critic_params, &critic_grad, None)?;
            learner.critic.net.set_params(&critic_params)?;

            report.actor_loss += actor_loss;
            report.value_loss += value_loss;
            report.entropy += entropy;
            report.clip_fraction += clipped as f64 / m;
            report.minibatches += 1;
        }
    }
    if report.minibatches > 0 {
        let k = report.minibatches as f64;
        report.actor_loss /= k;
        report.value_loss /= k;
        report.entropy /= k;
        report.clip_fraction /= k;
    }
    Ok(report)
}

/// SDFs of one evaluation episode: unregulated, PID, and the policy's mean
/// action, all on the same noise realisation.
pub fn evaluate_on(env: &SpillEnv, policy: &Policy, gains: &PidGains) -> Result<(f64, f64, f64)> {
    let noise = sdf(env.clone().run_unregulated()?.raw.samples())?.sdf;
    let pid = sdf(run_pid_on(env.clone(), gains)?.corrected.samples())?.sdf;
    let rl = sdf(run_policy_on(env.clone(), policy)?.corrected.samples())?.sdf;
    Ok((noise, pid, rl))
}

pub fn evaluate_seed(policy: &Policy, gains: &PidGains, env_cfg: &EnvConfig, seed: u64) -> Result<SeedReport> {
    let env = SpillEnv::reset(env_cfg.clone(), seed)?;
    let (noise, pid, rl) = evaluate_on(&env, policy, gains)?;
    Ok(SeedReport::new(seed, noise, pid, rl))
}

pub fn evaluate(policy: &Policy, gains: &PidGains, env_cfg: &EnvConfig, seeds: &[u64]) -> Result<ImprovementReport> {
    let per_seed = seeds
        .iter()
        .map(|&s| evaluate_seed(policy, gains, env_cfg, s))
        .collect::<Result<Vec<_>>>()?;
    ImprovementReport::from_seeds(per_seed)
}

/// One row of the training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub iter: usize,
    pub seed: u64,
    pub mean_reward: f64,
    pub sdf_rl: f64,
    pub sdf_pid: f64,
    pub sdf_noise: f64,
}

/// Stepwise trainer; [`train`] drives it to completion.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub env_cfg: EnvConfig,
    pub reward_cfg: RewardConfig,
    pub gains: PidGains,
    pub learner: Learner,
    iteration: usize,
    env: Option<SpillEnv>,
    sample_rng: SimRng,
    shuffle_rng: SimRng,
}

impl Trainer {
    pub fn new(
        cfg: TrainConfig,
        env_cfg: EnvConfig,
        reward_cfg: RewardConfig,
        gains: PidGains,
        policy_variant: PolicyVariant,
        state_variant: StateVariant,
    ) -> Result<Self> {
        env_cfg.validate()?;
        cfg.validate(&env_cfg)?;
        reward_cfg.validate()?;
        gains.validate()?;
        let learner = Learner::new(&cfg, &env_cfg, &gains, policy_variant, state_variant)?;
        let mut rng = SimRng::seed_from_u64(cfg.master_seed);
        // the first two forks went to network initialisation
        let _ = rng.fork();
        let _ = rng.fork();
        let sample_rng = rng.fork();
        let shuffle_rng = rng.fork();
        Ok(Self { cfg, env_cfg, reward_cfg, gains, learner, iteration: 0, env: None, sample_rng, shuffle_rng })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn is_finished(&self) -> bool {
        self.iteration >= self.cfg.iterations
    }

    fn seed_for(&self, iteration: usize) -> u64 {
        let rotation = iteration / self.cfg.seed_rotation_period;
        self.cfg.seeds[rotation % self.cfg.seeds.len()]
    }

    /// Collect, estimate advantages, update. On error the learner may be
    /// partially updated; callers keep their own last good copy.
    pub fn step(&mut self) -> Result<(CurveRow, LossReport)> {
        let i = self.iteration;
        let seed = self.seed_for(i);
        let mut env = match self.env.take() {
            Some(mut env) if !i.is_multiple_of(self.cfg.seed_rotation_period) => {
                env.next_episode();
                env
            }
            _ => SpillEnv::reset(self.env_cfg.clone(), seed)?,
        };
        let fresh = env.clone();
        let mut buffer =
            collect_rollout(&mut env, &self.learner.policy, &self.learner.critic, &self.reward_cfg, &mut self.sample_rng)?;
        compute_gae(&mut buffer, self.cfg.gamma, self.cfg.gae_lambda);
        let losses = ppo_update(&mut self.learner, &buffer, &self.cfg, &mut self.shuffle_rng)?;
        let (sdf_noise, sdf_pid, sdf_rl) = evaluate_on(&fresh, &self.learner.policy, &self.gains)?;
        self.env = Some(env);
        self.iteration += 1;
        Ok((CurveRow { iter: i, seed, mean_reward: buffer.mean_reward(), sdf_rl, sdf_pid, sdf_noise }, losses))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub learner: Learner,
    pub curve: Vec<CurveRow>,
    pub losses: Vec<LossReport>,
    pub report: ImprovementReport,
}

/// Training aborted; `last_good` is the learner before the failing
/// iteration (absent when the configuration was rejected up front).
#[derive(Debug, Clone)]
pub struct TrainError {
    pub iteration: usize,
    pub source: Error,
    pub last_good: Option<Box<Learner>>,
    pub curve: Vec<CurveRow>,
}

impl core::fmt::Display for TrainError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "training failed at iteration {}: {}", self.iteration, self.source)
    }
}

impl core::error::Error for TrainError {}

/// Run `cfg.iterations` iterations, then evaluate the mean-action policy on
/// every seed in `cfg.seeds`.
pub fn train(
    cfg: &TrainConfig,
    env_cfg: &EnvConfig,
    reward_cfg: &RewardConfig,
    gains: &PidGains,
    policy_variant: PolicyVariant,
    state_variant: StateVariant,
) -> core::result::Result<TrainOutcome, TrainError> {
    let fail = |iteration, source, last_good: &Learner, curve: &Vec<CurveRow>| TrainError {
        iteration,
        source,
        last_good: Some(Box::new(last_good.clone())),
        curve: curve.clone(),
    };
    let mut trainer = Trainer::new(cfg.clone(), env_cfg.clone(), *reward_cfg, *gains, policy_variant, state_variant)
        .map_err(|source| TrainError { iteration: 0, source, last_good: None, curve: Vec::new() })?;
    let mut curve = Vec::with_capacity(cfg.iterations);
    let mut losses = Vec::with_capacity(cfg.iterations);
    while !trainer.is_finished() {
        let last_good = trainer.learner.clone();
        match trainer.step() {
            Ok((row, loss)) => {
                curve.push(row);
                losses.push(loss);
            }
            Err(e) => return Err(fail(trainer.iteration(), e, &last_good, &curve)),
        }
    }
    let report = evaluate(&trainer.learner.policy, gains, env_cfg, &cfg.seeds)
        .map_err(|e| fail(trainer.iteration(), e, &trainer.learner, &curve))?;
    Ok(TrainOutcome { learner: trainer.learner, curve, losses, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::tracking_errors;

    fn brute_force_gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
        let n = rewards.len();
        let next_v = |t: usize| if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = |t: usize| rewards[t] + gamma * next_v(t) * if dones[t] { 0.0 } else { 1.0 } - values[t];
        (0..n)
            .map(|t| {
                let mut total = 0.0;
                let mut weight = 1.0;
                for k in 0..(n - t) {
                    total += weight * delta(t + k);
                    if dones[t + k] {
                        break;
                    }
                    weight *= gamma * lambda;
                }
                total
            })
            .collect()
    }

    #[test]
    fn gae_lambda_zero_is_td_residual() {
        let r = [0.5, -1.0, 0.25];
        let v = [0.1, 0.2, -0.3];
        let d = [false, false, true];
        let (adv, ret) = gae(&r, &v, &d, 0.9, 0.0);
        assert_eq!(adv[0], 0.5 + 0.9 * 0.2 - 0.1);
        assert_eq!(adv[1], -1.0 + 0.9 * -0.3 - 0.2);
        assert_eq!(adv[2], 0.25 + 0.3);
        assert_eq!(ret[2], adv[2] + v[2]);
    }

    #[test]
    fn gae_gamma_zero_is_reward_minus_value() {
        let r = [0.5, -1.0, 0.25];
        let v = [0.1, 0.2, -0.3];
        let (adv, _) = gae(&r, &v, &[false, false, true], 0.0, 0.95);
        for t in 0..3 {
            assert_eq!(adv[t], r[t] - v[t]);
        }
    }

    #[test]
    fn gae_matches_brute_force_on_random_buffer() {
        let mut rng = SimRng::seed_from_u64(17);
        let r: Vec<f64> = (0..5).map(|_| rng.standard_normal()).collect();
        let v: Vec<f64> = (0..5).map(|_| rng.standard_normal()).collect();
        let d = [false, false, false, false, true];
        let (adv, _) = gae(&r, &v, &d, 0.99, 0.95);
        let oracle = brute_force_gae(&r, &v, &d, 0.99, 0.95);
        for (a, b) in adv.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_gives_unit_moments() {
        let mut xs = vec![1.0, 2.0, 3.0, 10.0];
        normalize(&mut xs);
        let mean: f64 = xs.iter().sum::<f64>() / 4.0;
        let var: f64 = xs.iter().map(|x| x * x).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-6);
        let mut zeros = vec![0.0; 5];
        normalize(&mut zeros);
        assert!(zeros.iter().all(|&x| x == 0.0));
    }

    fn learner(variant: StateVariant) -> (Learner, TrainConfig, EnvConfig) {
        let cfg = TrainConfig::default();
        let env = EnvConfig::default();
        let gains = PidGains::new(0.5, 0.5, 0.0, env.dt);
        (Learner::new(&cfg, &env, &gains, PolicyVariant::NeuralPid, variant).unwrap(), cfg, env)
    }

    #[test]
    fn rollout_rewards_match_offline_recomputation() {
        let (l, _, env_cfg) = learner(StateVariant::PidAct);
        let mut env = SpillEnv::reset(env_cfg.clone(), 2).unwrap();
        let reward = RewardConfig::ema(0.5);
        let buf = collect_rollout(&mut env, &l.policy, &l.critic, &reward, &mut SimRng::seed_from_u64(0)).unwrap();
        assert_eq!(buf.len(), 430);
        let offline = reward
            .rewards(&tracking_errors(buf.episode.corrected.samples(), 1.0), 430)
            .unwrap();
        assert_eq!(buf.rewards(), offline);
        assert!(buf.transitions.last().unwrap().done);
        assert!(buf.transitions[..429].iter().all(|t| !t.done));
    }

    #[test]
    fn noiseless_zero_policy_has_zero_rewards() {
        let cfg = TrainConfig::default();
        let env_cfg = EnvConfig::noiseless();
        let mut l = Learner::new(&cfg, &env_cfg, &PidGains::zero(env_cfg.dt), PolicyVariant::NeuralPid, StateVariant::PidAct).unwrap();
        let mut p = l.policy.params();
        *p.last_mut().unwrap() = -5.0;
        l.policy.set_params(&p).unwrap();
        let mut env = SpillEnv::reset(env_cfg, 0).unwrap();
        let buf = collect_rollout(&mut env, &l.policy, &l.critic, &RewardConfig::default(), &mut SimRng::seed_from_u64(1)).unwrap();
        // first reward sees x_0 = 1 before any action
        assert_eq!(buf.transitions[0].reward, 0.0);
        assert!(buf.rewards().iter().all(|r| r.abs() < 0.05));
    }

    #[test]
    fn rollout_requires_fresh_env() {
        let (l, _, env_cfg) = learner(StateVariant::PidAct);
        let mut env = SpillEnv::reset(env_cfg, 0).unwrap();
        env.step(0.0).unwrap();
        assert!(collect_rollout(&mut env, &l.policy, &l.critic, &RewardConfig::default(), &mut SimRng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn zero_advantages_leave_actor_unchanged() {
        let (mut l, cfg, env_cfg) = learner(StateVariant::PidAct);
        let mut env = SpillEnv::reset(env_cfg.clone(), 0).unwrap();
        let mut buf = collect_rollout(&mut env, &l.policy, &l.critic, &RewardConfig::default(), &mut SimRng::seed_from_u64(0)).unwrap();
        compute_gae(&mut buf, 0.99, 0.95);
        buf.advantages.iter_mut().for_each(|a| *a = 0.0);
        let before = l.policy.clone();
        let critic_before = l.critic.clone();
        let rep = ppo_update(&mut l, &buf, &cfg, &mut SimRng::seed_from_u64(0)).unwrap();
        assert_eq!(l.policy, before);
        assert_eq!(rep.actor_loss, 0.0);
        assert_ne!(l.critic, critic_before);
    }

    #[test]
    fn first_minibatch_ratio_is_one() {
        let (mut l, cfg, env_cfg) = learner(StateVariant::PidAct);
        let mut env = SpillEnv::reset(env_cfg.clone(), 0).unwrap();
        let mut buf = collect_rollout(&mut env, &l.policy, &l.critic, &RewardConfig::default(), &mut SimRng::seed_from_u64(0)).unwrap();
        compute_gae(&mut buf, 0.99, 0.95);
        let one_pass = TrainConfig { epochs_per_iter: 1, minibatch: 430, ..cfg };
        let rep = ppo_update(&mut l, &buf, &one_pass, &mut SimRng::seed_from_u64(0)).unwrap();
        assert_eq!(rep.clip_fraction, 0.0);
        // normalised advantages have zero mean, so the unclipped surrogate is ~0
        assert!(rep.actor_loss.abs() < 1e-9, "{}", rep.actor_loss);
    }

    #[test]
    fn two_transition_manual_surrogate() {
        // Policy N(w·p, exp(-1)) on a single feature; old log-probs set so the
        // ratios are known.
        let cfg = TrainConfig { epochs_per_iter: 1, minibatch: 2, value_coef: 0.0, ..TrainConfig::default() };
        let env_cfg = EnvConfig::default();
        let gains = PidGains::new(0.5, 0.0, 0.0, env_cfg.dt);
        let mut l = Learner::new(&cfg, &env_cfg, &gains, PolicyVariant::NeuralPid, StateVariant::Pid3).unwrap();
        let s1 = StateVector::new(&[0.2, 0.0, 0.0]).unwrap();
        let s2 = StateVector::new(&[-0.4, 0.0, 0.0]).unwrap();
        let lp1 = l.policy.log_prob(&s1, 0.3).unwrap();
        let lp2 = l.policy.log_prob(&s2, -0.1).unwrap();
        let mk = |state, raw_action, log_prob| Transition {
            state,
            action: raw_action,
            raw_action,
            log_prob,
            reward: 0.0,
            value: 0.0,
            done: false,
        };
        // ratio1 = e^{0.5} (clipped, A > 0), ratio2 = e^{-0.1} (inside, A < 0)
        let buf = RolloutBuffer {
            transitions: vec![mk(s1, 0.3, lp1 - 0.5), mk(s2, -0.1, lp2 + 0.1)],
            advantages: vec![1.0, -2.0],
            returns: vec![0.0, 0.0],
            episode: Episode::default(),
        };
        let r1 = libm::exp(0.5_f64);
        let r2 = libm::exp(-0.1_f64);
        let obj1 = (r1 * 1.0).min(1.2 * 1.0);
        let obj2 = (r2 * -2.0).min(r2.clamp(0.8, 1.2) * -2.0);
        let expected = -(obj1 + obj2) / 2.0;
        let rep = ppo_update(&mut l, &buf, &cfg, &mut SimRng::seed_from_u64(0)).unwrap();
        assert!((rep.actor_loss - expected).abs() < 1e-12, "{} vs {expected}", rep.actor_loss);
        assert_eq!(rep.clip_fraction, 0.5);
    }

    #[test]
    fn clipped_objective_never_exceeds_unclipped() {
        let mut rng = SimRng::seed_from_u64(8);
        for _ in 0..10_000 {
            let ratio = libm::exp(rng.standard_normal());
            let adv = 3.0 * rng.standard_normal();
            let obj = (ratio * adv).min(ratio.clamp(0.8, 1.2) * adv);
            assert!(obj <= ratio * adv);
        }
    }

    #[test]
    fn zero_iterations_keep_pid_policy() {
        let env_cfg = EnvConfig::default();
        let cfg = TrainConfig { iterations: 0, seeds: vec![0, 1], ..TrainConfig::default() };
        let gains = PidGains::new(0.5, 0.5, 0.0, env_cfg.dt);
        let out = train(&cfg, &env_cfg, &RewardConfig::default(), &gains, PolicyVariant::NeuralPid, StateVariant::PidAct).unwrap();
        assert!(out.curve.is_empty());
        assert_eq!(out.learner.policy, Policy::NeuralPid(PolicyParams::from_pid(&gains, StateVariant::PidAct)));
        for s in &out.report.per_seed {
            assert_eq!(s.sdf_rl, s.sdf_pid);
        }
    }

    #[test]
    fn short_training_is_deterministic() {
        let env_cfg = EnvConfig::default();
        let cfg = TrainConfig { iterations: 3, seed_rotation_period: 2, seeds: vec![4, 5], ..TrainConfig::default() };
        let gains = PidGains::new(0.5, 0.5, 0.0, env_cfg.dt);
        let run = || train(&cfg, &env_cfg, &RewardConfig::default(), &gains, PolicyVariant::NeuralPid, StateVariant::PidAct).unwrap();
        let a = run();
        let b = run();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.learner, b.learner);
        assert_eq!(a.curve.len(), 3);
        assert_eq!(a.curve.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![4, 4, 5]);
    }
}

//! PID control, its grid tuner, and the policies trained by PPO.
//!
//! The neuralized-PID policy is a linear map over the PID error features
//! (plus the previous action for the `PidAct` state), with Gaussian
//! exploration around it. Initialised with the tuned PID gains, an action
//! weight of zero and a zero bias, its mean action is exactly the PID
//! control signal.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradnet::{Activation, DenseNet};
use crate::metrics::sdf;
use crate::rng::SimRng;
use crate::spillsim::{EnvConfig, Episode, SpillEnv};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
pub const LOG_STD_INIT: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Sample interval in seconds, used by the derivative term.
    pub dt: f64,
}

impl PidGains {
    pub fn new(kp: f64, ki: f64, kd: f64, dt: f64) -> Self {
        Self { kp, ki, kd, dt }
    }

    pub fn zero(dt: f64) -> Self {
        Self::new(0.0, 0.0, 0.0, dt)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::config("dt", "must be finite and positive"));
        }
        if ![self.kp, self.ki, self.kd].iter().all(|g| g.is_finite()) {
            return Err(Error::config("gains", "must be finite"));
        }
        Ok(())
    }

    fn magnitude_key(&self) -> [f64; 3] {
        [self.kp.abs(), self.ki.abs(), self.kd.abs()]
    }
}

/// Running P, I and D terms of the tracking error `x_t - reference`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorState {
    pub current_error: f64,
    pub error_sum: f64,
    /// Backward difference over `dt`; zero at the first sample.
    pub error_diff_rate: f64,
    pub prev_error: f64,
    pub steps: usize,
}

impl ErrorState {
    pub fn observe(&mut self, x: f64, reference: f64, dt: f64) {
        let e = x - reference;
        self.prev_error = self.current_error;
        self.error_diff_rate = if self.steps == 0 { 0.0 } else { (e - self.prev_error) / dt };
        self.current_error = e;
        self.error_sum += e;
        self.steps += 1;
    }
}

/// `K_P·P + K_I·I + K_D·D`.
pub fn pid_update(gains: &PidGains, err: &ErrorState) -> Result<f64> {
    let terms = [err.current_error, err.error_sum, err.error_diff_rate];
    if terms.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("non-finite PID error term".into()));
    }
    let u = gains.kp * err.current_error + gains.ki * err.error_sum + gains.kd * err.error_diff_rate;
    if !u.is_finite() {
        return Err(Error::InvalidInput("non-finite PID output".into()));
    }
    Ok(u)
}

/// Which features the policy observes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateVariant {
    /// `[P, I, D, Act]`
    #[default]
    PidAct,
    /// `[P, I, D]`
    Pid3,
    /// `[CD, Over1, P, Act]`
    CdOver,
}

impl StateVariant {
    pub const ALL: [StateVariant; 3] = [StateVariant::PidAct, StateVariant::Pid3, StateVariant::CdOver];

    pub fn dim(self) -> usize {
        self.feature_names().len()
    }

    pub fn feature_names(self) -> &'static [&'static str] {
        match self {
            StateVariant::PidAct => &["p", "i", "d", "act"],
            StateVariant::Pid3 => &["p", "i", "d"],
            StateVariant::CdOver => &["cd", "over1", "p", "act"],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            StateVariant::PidAct => "P,I,D,Act",
            StateVariant::Pid3 => "P,I,D",
            StateVariant::CdOver => "CD,Over-1,P,Act",
        }
    }
}

pub const MAX_FEATURES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVector {
    values: [f64; MAX_FEATURES],
    len: usize,
}

impl StateVector {
    pub fn new(values: &[f64]) -> Result<Self> {
        if values.len() > MAX_FEATURES {
            return Err(Error::Shape { expected: MAX_FEATURES, got: values.len() });
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite state feature".into()));
        }
        let mut v = [0.0; MAX_FEATURES];
        v[..values.len()].copy_from_slice(values);
        Ok(Self { values: v, len: values.len() })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values[..self.len]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Builds state vectors from the stream of observations and decisions.
#[derive(Debug, Clone)]
pub struct FeatureTracker {
    reference: f64,
    dt: f64,
    steps_per_episode: usize,
    errors: ErrorState,
    prev_x: f64,
    last_x: f64,
    over_reference: usize,
    last_action: f64,
}

impl FeatureTracker {
    pub fn new(config: &EnvConfig) -> Self {
        Self {
            reference: config.reference,
            dt: config.dt,
            steps_per_episode: config.steps_per_episode,
            errors: ErrorState::default(),
            prev_x: config.reference,
            last_x: config.reference,
            over_reference: 0,
            last_action: 0.0,
        }
    }

    /// Feed the corrected sample `x_t` and the raw sample it came from.
    pub fn observe(&mut self, corrected: f64, raw: f64) {
        self.errors.observe(corrected, self.reference, self.dt);
        self.prev_x = if self.errors.steps == 1 { corrected } else { self.last_x };
        self.last_x = corrected;
        if raw >= self.reference {
            self.over_reference += 1;
        }
    }

    /// The action just decided; it becomes `Act` for the next state.
    pub fn record_action(&mut self, action: f64) {
        self.last_action = action;
    }

    pub fn errors(&self) -> &ErrorState {
        &self.errors
    }

    pub fn state(&self, variant: StateVariant) -> Result<StateVector> {
        let e = &self.errors;
        match variant {
            StateVariant::PidAct => StateVector::new(&[
                e.current_error,
                e.error_sum,
                e.error_diff_rate,
                self.last_action,
            ]),
            StateVariant::Pid3 => StateVector::new(&[e.current_error, e.error_sum, e.error_diff_rate]),
            StateVariant::CdOver => StateVector::new(&[
                self.last_x - self.prev_x,
                self.over_reference as f64 / self.steps_per_episode as f64,
                e.current_error,
                self.last_action,
            ]),
        }
    }
}

/// Parameters of the neuralized-PID policy: one weight per state feature
/// (the first three are `K_P, K_I, K_D` for the PID states), a bias and the
/// log standard deviation of the Gaussian exploration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub variant: StateVariant,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub log_std: f64,
}

impl PolicyParams {
    /// Start at the PID controller. For `CdOver`, which has no integral
    /// feature, the derivative gain moves onto the corrected difference.
    pub fn from_pid(gains: &PidGains, variant: StateVariant) -> Self {
        let weights = match variant {
            StateVariant::PidAct => vec![gains.kp, gains.ki, gains.kd, 0.0],
            StateVariant::Pid3 => vec![gains.kp, gains.ki, gains.kd],
            StateVariant::CdOver => vec![gains.kd / gains.dt, 0.0, gains.kp, 0.0],
        };
        Self { variant, weights, bias: 0.0, log_std: LOG_STD_INIT }
    }

    pub fn pid_weights(&self) -> Option<[f64; 3]> {
        match self.variant {
            StateVariant::PidAct | StateVariant::Pid3 => {
                Some([self.weights[0], self.weights[1], self.weights[2]])
            }
            StateVariant::CdOver => None,
        }
    }

    pub fn action_weight(&self) -> Option<f64> {
        match self.variant {
            StateVariant::PidAct | StateVariant::CdOver => Some(self.weights[3]),
            StateVariant::Pid3 => None,
        }
    }

    fn check(&self, state: &StateVector) -> Result<()> {
        if self.weights.len() != self.variant.dim() {
            return Err(Error::Shape { expected: self.variant.dim(), got: self.weights.len() });
        }
        if state.len() != self.weights.len() {
            return Err(Error::Shape { expected: self.weights.len(), got: state.len() });
        }
        Ok(())
    }
}

/// Mean action `w · s + bias`.
pub fn policy_mean(params: &PolicyParams, state: &StateVector) -> Result<f64> {
    params.check(state)?;
    let dot = params
        .weights
        .iter()
        .zip(state.as_slice())
        .fold(None, |acc: Option<f64>, (w, x)| Some(acc.map_or(w * x, |a| a + w * x)))
        .unwrap_or(0.0);
    Ok(dot + params.bias)
}

pub fn gaussian_log_prob(x: f64, mean: f64, log_std: f64) -> f64 {
    let z = (x - mean) * libm::exp(-log_std);
    -0.5 * z * z - log_std - 0.5 * libm::log(TAU)
}

pub fn gaussian_entropy(log_std: f64) -> f64 {
    0.5 * (1.0 + libm::log(TAU)) + log_std
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionSample {
    /// Clamped to the actuator bound; this is what the environment sees.
    pub action: f64,
    /// Unclamped Gaussian draw; the log-probability refers to this value.
    pub raw_action: f64,
    pub log_prob: f64,
}

pub fn sample_gaussian(mean: f64, log_std: f64, action_bound: f64, rng: &mut SimRng) -> ActionSample {
    let raw_action = mean + libm::exp(log_std) * rng.standard_normal();
    ActionSample {
        action: raw_action.clamp(-action_bound, action_bound),
        raw_action,
        log_prob: gaussian_log_prob(raw_action, mean, log_std),
    }
}

pub fn policy_sample(
    params: &PolicyParams,
    state: &StateVector,
    action_bound: f64,
    rng: &mut SimRng,
) -> Result<ActionSample> {
    let mean = policy_mean(params, state)?;
    Ok(sample_gaussian(mean, params.log_std, action_bound, rng))
}

/// Actor swap for the NN-policy ablation: a tanh MLP over the normalised
/// state features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpPolicy {
    pub variant: StateVariant,
    pub net: DenseNet,
    pub log_std: f64,
    pub input_scale: Vec<f64>,
}

impl MlpPolicy {
    pub fn new(variant: StateVariant, hidden: &[usize], input_scale: Vec<f64>, rng: &mut SimRng) -> Result<Self> {
        check_scales(variant, &input_scale)?;
        let mut dims = vec![variant.dim()];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let net = DenseNet::mlp(&dims, Activation::Tanh, 0.01, rng)?;
        Ok(Self { variant, net, log_std: LOG_STD_INIT, input_scale })
    }

    fn scaled(&self, state: &StateVector) -> Result<Vec<f64>> {
        if state.len() != self.input_scale.len() {
            return Err(Error::Shape { expected: self.input_scale.len(), got: state.len() });
        }
        Ok(state.as_slice().iter().zip(&self.input_scale).map(|(x, s)| x / s).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyVariant {
    #[default]
    NeuralPid,
    Mlp,
}

impl PolicyVariant {
    pub fn label(self) -> &'static str {
        match self {
            PolicyVariant::NeuralPid => "PID",
            PolicyVariant::Mlp => "NN",
        }
    }
}

/// The actor trained by PPO.
///
/// Flat parameter layout: the mean parameters (linear weights then bias, or
/// the network's flattened parameters) followed by `log_std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    NeuralPid(PolicyParams),
    Mlp(MlpPolicy),
}

impl Policy {
    pub fn variant(&self) -> StateVariant {
        match self {
            Policy::NeuralPid(p) => p.variant,
            Policy::Mlp(m) => m.variant,
        }
    }

    pub fn kind(&self) -> PolicyVariant {
        match self {
            Policy::NeuralPid(_) => PolicyVariant::NeuralPid,
            Policy::Mlp(_) => PolicyVariant::Mlp,
        }
    }

    pub fn log_std(&self) -> f64 {
        match self {
            Policy::NeuralPid(p) => p.log_std,
            Policy::Mlp(m) => m.log_std,
        }
    }

    pub fn mean(&self, state: &StateVector) -> Result<f64> {
        match self {
            Policy::NeuralPid(p) => policy_mean(p, state),
            Policy::Mlp(m) => Ok(m.net.predict(&m.scaled(state)?)?[0]),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Policy::NeuralPid(p) => p.weights.len() + 2,
            Policy::Mlp(m) => m.net.num_params() + 1,
        }
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = match self {
            Policy::NeuralPid(p) => {
                let mut v = p.weights.clone();
                v.push(p.bias);
                v
            }
            Policy::Mlp(m) => m.net.params(),
        };
        out.push(self.log_std());
        out
    }

    /// Overwrite all parameters; `log_std` is clamped to its range.
    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape { expected: self.num_params(), got: flat.len() });
        }
        if flat.iter().any(|x| !x.is_finite()) {
            return Err(Error::Diverged { step: 0, detail: "non-finite policy parameter".into() });
        }
        let (body, log_std) = flat.split_at(flat.len() - 1);
        let log_std = log_std[0].clamp(LOG_STD_MIN, LOG_STD_MAX);
        match self {
            Policy::NeuralPid(p) => {
                let n = p.weights.len();
                p.weights.copy_from_slice(&body[..n]);
                p.bias = body[n];
                p.log_std = log_std;
            }
            Policy::Mlp(m) => {
                m.net.set_params(body)?;
                m.log_std = log_std;
            }
        }
        Ok(())
    }

    /// Per-parameter step-size multipliers: the linear policy's weights move
    /// in units of `1 / feature_scale` so that one optimizer step changes the
    /// action by a comparable amount for every feature.
    pub fn lr_scales(&self, feature_scale: &[f64]) -> Result<Vec<f64>> {
        check_scales(self.variant(), feature_scale)?;
        Ok(match self {
            Policy::NeuralPid(_) => {
                let mut s: Vec<f64> = feature_scale.iter().map(|x| 1.0 / x).collect();
                s.push(1.0);
                s.push(1.0);
                s
            }
            Policy::Mlp(_) => vec![1.0; self.num_params()],
        })
    }

    pub fn log_prob(&self, state: &StateVector, raw_action: f64) -> Result<f64> {
        Ok(gaussian_log_prob(raw_action, self.mean(state)?, self.log_std()))
    }

    pub fn sample(&self, state: &StateVector, action_bound: f64, rng: &mut SimRng) -> Result<ActionSample> {
        Ok(sample_gaussian(self.mean(state)?, self.log_std(), action_bound, rng))
    }

    /// Add `coeff · ∂ log π(raw_action | state) / ∂θ` into `acc` and return
    /// the log-probability.
    pub fn accumulate_log_prob_grad(
        &self,
        state: &StateVector,
        raw_action: f64,
        coeff: f64,
        acc: &mut [f64],
    ) -> Result<f64> {
        if acc.len() != self.num_params() {
            return Err(Error::Shape { expected: self.num_params(), got: acc.len() });
        }
        let log_std = self.log_std();
        let inv_var = libm::exp(-2.0 * log_std);
        let last = acc.len() - 1;
        let mean = match self {
            Policy::NeuralPid(p) => {
                let mean = policy_mean(p, state)?;
                let d_mean = coeff * (raw_action - mean) * inv_var;
                for (g, x) in acc.iter_mut().zip(state.as_slice()) {
                    *g += d_mean * x;
                }
                acc[p.weights.len()] += d_mean;
                mean
            }
            Policy::Mlp(m) => {
                let (out, tape) = m.net.forward(&m.scaled(state)?)?;
                let mean = out[0];
                let d_mean = coeff * (raw_action - mean) * inv_var;
                m.net.backward_into(&tape, &[d_mean], &mut acc[..last])?;
                mean
            }
        };
        let diff = raw_action - mean;
        acc[last] += coeff * (diff * diff * inv_var - 1.0);
        Ok(gaussian_log_prob(raw_action, mean, log_std))
    }
}

/// Drive one episode in closed loop. `decide` sees the tracker after each
/// corrected sample and returns the next correction, which is clamped to
/// the actuator bound and applied on the following step.
pub fn run_closed_loop<F>(env: &mut SpillEnv, mut decide: F) -> Result<()>
where
    F: FnMut(&FeatureTracker) -> Result<f64>,
{
    let mut tracker = FeatureTracker::new(env.config());
    let mut action = 0.0;
    while !env.is_done() {
        let out = env.step(action)?;
        tracker.observe(out.obs, out.raw);
        if out.done {
            break;
        }
        action = env.config().clamp_action(decide(&tracker)?);
        tracker.record_action(action);
    }
    Ok(())
}

fn check_scales(variant: StateVariant, scales: &[f64]) -> Result<()> {
    if scales.len() != variant.dim() {
        return Err(Error::Shape { expected: variant.dim(), got: scales.len() });
    }
    if scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::InvalidInput("feature scales must be finite and positive".into()));
    }
    Ok(())
}

/// Root-mean-square of each state feature along PID closed-loop episodes on
/// `seeds`. Features that stay at zero get scale 1. Used to normalise
/// network inputs and to precondition the linear policy's step sizes.
pub fn feature_scales(config: &EnvConfig, seeds: &[u64], gains: &PidGains, variant: StateVariant) -> Result<Vec<f64>> {
    gains.validate()?;
    if seeds.is_empty() {
        return Err(Error::config("seeds", "at least one seed is required"));
    }
    let mut sum_sq = vec![0.0; variant.dim()];
    let mut count = 0usize;
    for &seed in seeds {
        let mut env = SpillEnv::reset(config.clone(), seed)?;
        run_closed_loop(&mut env, |tr| {
            let s = tr.state(variant)?;
            for (acc, x) in sum_sq.iter_mut().zip(s.as_slice()) {
                *acc += x * x;
            }
            count += 1;
            pid_update(gains, tr.errors())
        })?;
    }
    Ok(sum_sq
        .iter()
        .map(|&ss| {
            let rms = libm::sqrt(ss / count.max(1) as f64);
            if rms.is_finite() && rms > 0.0 { rms } else { 1.0 }
        })
        .collect())
}

pub fn run_pid_on(mut env: SpillEnv, gains: &PidGains) -> Result<Episode> {
    gains.validate()?;
    run_closed_loop(&mut env, |tr| pid_update(gains, tr.errors()))?;
    Ok(env.into_episode())
}

pub fn run_pid_episode(config: &EnvConfig, seed: u64, gains: &PidGains) -> Result<Episode> {
    run_pid_on(SpillEnv::reset(config.clone(), seed)?, gains)
}

/// Closed loop with the deterministic mean action.
pub fn run_policy_on(mut env: SpillEnv, policy: &Policy) -> Result<Episode> {
    let variant = policy.variant();
    run_closed_loop(&mut env, |tr| policy.mean(&tr.state(variant)?))?;
    Ok(env.into_episode())
}

/// Gain ranges searched by [`tune_pid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PidGrid {
    pub kp: Vec<f64>,
    pub ki: Vec<f64>,
    pub kd: Vec<f64>,
    pub refine_rounds: usize,
}

impl Default for PidGrid {
    fn default() -> Self {
        Self {
            kp: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            ki: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            kd: vec![0.0, 2.5e-5, 5e-5],
            refine_rounds: 3,
        }
    }
}

impl PidGrid {
    fn validate(&self) -> Result<()> {
        for (name, axis) in [("kp", &self.kp), ("ki", &self.ki), ("kd", &self.kd)] {
            if axis.is_empty() {
                return Err(Error::config(name, "grid axis is empty"));
            }
            if axis.iter().any(|g| !g.is_finite()) {
                return Err(Error::config(name, "grid values must be finite"));
            }
        }
        Ok(())
    }

    fn initial_step(axis: &[f64]) -> f64 {
        let lo = axis.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = axis.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if axis.len() < 2 {
            0.0
        } else {
            (hi - lo) / (axis.len() - 1) as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub gains: PidGains,
    pub mean_sdf: f64,
    pub evaluations: usize,
}

pub fn mean_pid_sdf(config: &EnvConfig, seeds: &[u64], gains: &PidGains) -> Result<f64> {
    let mut total = 0.0;
    for &seed in seeds {
        total += sdf(run_pid_episode(config, seed, gains)?.corrected.samples())?.sdf;
    }
    Ok(total / seeds.len() as f64)
}

fn is_better(cand: (f64, &PidGains), best: (f64, &PidGains)) -> bool {
    match cand.0.partial_cmp(&best.0) {
        Some(Ordering::Greater) => true,
        Some(Ordering::Equal) => cand.1.magnitude_key() < best.1.magnitude_key(),
        _ => false,
    }
}

/// Grid search maximising mean SDF over `seeds`, then coordinate descent
/// with the step per axis halved after every round. Ties go to the gains
/// with the lexicographically smallest `(|kp|, |ki|, |kd|)`.
pub fn tune_pid(config: &EnvConfig, seeds: &[u64], grid: &PidGrid) -> Result<TuneOutcome> {
    config.validate()?;
    grid.validate()?;
    if seeds.is_empty() {
        return Err(Error::config("seeds", "need at least one seed"));
    }
    let mut evaluations = 0;
    let mut eval = |g: &PidGains| {
        evaluations += 1;
        mean_pid_sdf(config, seeds, g)
    };

    let mut best: Option<(f64, PidGains)> = None;
    for &kp in &grid.kp {
        for &ki in &grid.ki {
            for &kd in &grid.kd {
                let g = PidGains::new(kp, ki, kd, config.dt);
                let s = eval(&g)?;
                if best.as_ref().is_none_or(|b| is_better((s, &g), (b.0, &b.1))) {
                    best = Some((s, g));
                }
            }
        }
    }
    let (mut best_sdf, mut best_gains) = best.expect("grid is non-empty");

    let mut steps = [
        PidGrid::initial_step(&grid.kp),
        PidGrid::initial_step(&grid.ki),
        PidGrid::initial_step(&grid.kd),
    ];
    for _ in 0..grid.refine_rounds {
        for (axis, &step) in steps.iter().enumerate() {
            if step == 0.0 {
                continue;
            }
            let center = best_gains;
            for delta in [-step, step] {
                let mut g = center;
                match axis {
                    0 => g.kp += delta,
                    1 => g.ki += delta,
                    _ => g.kd += delta,
                }
                let s = eval(&g)?;
                if is_better((s, &g), (best_sdf, &best_gains)) {
                    best_sdf = s;
                    best_gains = g;
                }
            }
        }
        steps.iter_mut().for_each(|s| *s *= 0.5);
    }
    Ok(TuneOutcome { gains: best_gains, mean_sdf: best_sdf, evaluations })
}

//! Seeded surrogate of the slow-extraction spill.
//!
//! The raw spill rate is the reference level plus harmonic ripple (a
//! power-supply ripple analogue) plus an Ornstein–Uhlenbeck drift. The
//! controller's scalar correction is subtracted from the raw rate and the
//! result is clamped to the physical range.
//!
//! Timing: the action passed to [`SpillEnv::step`] is the decision the
//! controller took after seeing the previous corrected sample, so a decision
//! taken on `x_t` acts on `x_{t+1}`. The first step of an episode is driven
//! with action 0.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub steps_per_episode: usize,
    /// Seconds per sample.
    pub dt: f64,
    pub reference: f64,
    pub ripple_amps: Vec<f64>,
    /// Hz, one per amplitude.
    pub ripple_freqs: Vec<f64>,
    pub ou_rho: f64,
    pub ou_sigma: f64,
    pub clamp_lo: f64,
    pub clamp_hi: f64,
    pub action_bound: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            steps_per_episode: 430,
            dt: 1e-4,
            reference: 1.0,
            ripple_amps: vec![0.10, 0.05],
            ripple_freqs: vec![60.0, 180.0],
            ou_rho: 0.9,
            // chosen so the unregulated SDF sits below 0.6 and a tuned PID lifts it above
            ou_sigma: 1.0,
            clamp_lo: 0.0,
            clamp_hi: 2.0,
            action_bound: 1.0,
        }
    }
}

impl EnvConfig {
    /// No ripple, no drift: the raw rate sits exactly on the reference.
    pub fn noiseless() -> Self {
        Self { ripple_amps: Vec::new(), ripple_freqs: Vec::new(), ou_sigma: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps_per_episode == 0 {
            return Err(Error::config("steps_per_episode", "must be positive"));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::config("dt", "must be finite and positive"));
        }
        if !(0.0..1.0).contains(&self.ou_rho) {
            return Err(Error::config("ou_rho", "must lie in [0, 1)"));
        }
        if !(self.ou_sigma.is_finite() && self.ou_sigma >= 0.0) {
            return Err(Error::config("ou_sigma", "must be finite and non-negative"));
        }
        if self.ripple_amps.len() != self.ripple_freqs.len() {
            return Err(Error::config(
                "ripple_freqs",
                "must have one frequency per ripple amplitude",
            ));
        }
        if self.ripple_amps.iter().any(|a| !a.is_finite()) {
            return Err(Error::config("ripple_amps", "amplitudes must be finite"));
        }
        if self.ripple_freqs.iter().any(|f| !f.is_finite()) {
            return Err(Error::config("ripple_freqs", "frequencies must be finite"));
        }
        if !self.reference.is_finite() {
            return Err(Error::config("reference", "must be finite"));
        }
        if !(self.clamp_lo.is_finite() && self.clamp_lo < self.reference) {
            return Err(Error::config("clamp_lo", "must be finite and below the reference"));
        }
        if !(self.clamp_hi.is_finite() && self.clamp_hi > self.reference) {
            return Err(Error::config("clamp_hi", "must be finite and above the reference"));
        }
        if !(self.action_bound.is_finite() && self.action_bound > 0.0) {
            return Err(Error::config("action_bound", "must be finite and positive"));
        }
        Ok(())
    }

    /// Stationary standard deviation of the drift component.
    pub fn ou_stationary_std(&self) -> f64 {
        self.ou_sigma / libm::sqrt(1.0 - self.ou_rho * self.ou_rho)
    }

    pub fn clamp_action(&self, action: f64) -> f64 {
        action.clamp(-self.action_bound, self.action_bound)
    }
}

/// Ordered spill-rate samples of one episode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpillTrace(Vec<f64>);

impl SpillTrace {
    pub fn with_capacity(n: usize) -> Self {
        Self(Vec::with_capacity(n))
    }

    pub fn samples(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn last(&self) -> Option<f64> {
        self.0.last().copied()
    }

    fn push(&mut self, x: f64) {
        self.0.push(x);
    }
}

impl From<Vec<f64>> for SpillTrace {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// The three aligned series of an episode: `actions[t]` is the correction
/// applied when producing `corrected[t]` from `raw[t]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Episode {
    pub raw: SpillTrace,
    pub corrected: SpillTrace,
    pub actions: SpillTrace,
}

/// What a single environment step reports back.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// Corrected spill rate `x_t`.
    pub obs: f64,
    /// Raw rate before correction.
    pub raw: f64,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct SpillEnv {
    config: EnvConfig,
    t: usize,
    ou_value: f64,
    phases: Vec<f64>,
    last_action: f64,
    episode: Episode,
    rng: SimRng,
}

impl SpillEnv {
    /// Fresh generator from `seed`, then a new episode.
    pub fn reset(config: EnvConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut env = Self {
            t: 0,
            ou_value: 0.0,
            phases: Vec::new(),
            last_action: 0.0,
            episode: Episode::default(),
            rng: SimRng::seed_from_u64(seed),
            config,
        };
        env.next_episode();
        Ok(env)
    }

    /// Start another episode drawing from the same (already advanced)
    /// generator stream. Used between seed rotations during training.
    pub fn next_episode(&mut self) {
        let n = self.config.steps_per_episode;
        self.t = 0;
        self.ou_value = 0.0;
        self.last_action = 0.0;
        self.phases = (0..self.config.ripple_amps.len()).map(|_| self.rng.uniform() * TAU).collect();
        self.episode = Episode {
            raw: SpillTrace::with_capacity(n),
            corrected: SpillTrace::with_capacity(n),
            actions: SpillTrace::with_capacity(n),
        };
    }

    /// Replace the ripple phases of a not-yet-started episode.
    pub fn set_phases(&mut self, phases: &[f64]) -> Result<()> {
        if phases.len() != self.phases.len() {
            return Err(Error::Shape { expected: self.phases.len(), got: phases.len() });
        }
        if self.t != 0 {
            return Err(Error::InvalidInput("phases can only be set before the first step".into()));
        }
        self.phases.copy_from_slice(phases);
        Ok(())
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn ou_value(&self) -> f64 {
        self.ou_value
    }

    pub fn last_action(&self) -> f64 {
        self.last_action
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.config.steps_per_episode
    }

    pub fn episode(&self) -> &Episode {
        &self.episode
    }

    pub fn into_episode(self) -> Episode {
        self.episode
    }

    /// Advance the drift and evaluate the raw rate at the current step. The
    /// rate is a physical quantity, so it shares the corrected clamp range.
    fn raw_next(&mut self) -> Result<f64> {
        if self.is_done() {
            return Err(Error::EpisodeExhausted { steps: self.config.steps_per_episode });
        }
        let cfg = &self.config;
        self.ou_value = cfg.ou_rho * self.ou_value + cfg.ou_sigma * self.rng.standard_normal();
        let time = self.t as f64 * cfg.dt;
        let mut rate = cfg.reference;
        for ((amp, freq), phase) in cfg.ripple_amps.iter().zip(&cfg.ripple_freqs).zip(&self.phases) {
            rate += amp * libm::sin(TAU * freq * time + phase);
        }
        Ok((rate + self.ou_value).clamp(cfg.clamp_lo, cfg.clamp_hi))
    }

    /// Apply `action` to this step's raw sample. Callers clamp the action to
    /// `action_bound` beforehand.
    pub fn step(&mut self, action: f64) -> Result<StepOutcome> {
        if !action.is_finite() {
            return Err(Error::InvalidAction { step: self.t, value: action });
        }
        let raw = self.raw_next()?;
        let corrected = (raw - action).clamp(self.config.clamp_lo, self.config.clamp_hi);
        self.last_action = action;
        self.episode.raw.push(raw);
        self.episode.corrected.push(corrected);
        self.episode.actions.push(action);
        self.t += 1;
        Ok(StepOutcome { obs: corrected, raw, done: self.is_done() })
    }

    /// Run the episode open loop (action 0 throughout) and return it.
    pub fn run_unregulated(mut self) -> Result<Episode> {
        while !self.is_done() {
            self.step(0.0)?;
        }
        Ok(self.episode)
    }
}

//! Spill Duty Factor, tracking rewards and improvement percentages.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdfReport {
    pub sdf: f64,
    /// Population standard deviation of the samples.
    pub spill_std: f64,
    pub n_samples: usize,
}

/// `SDF = 1 / (1 + std²)` over the samples of one spill.
pub fn sdf(samples: &[f64]) -> Result<SdfReport> {
    if samples.len() < 2 {
        return Err(Error::TraceTooShort { len: samples.len() });
    }
    if let Some(bad) = samples.iter().find(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(alloc::format!("non-finite spill sample {bad}")));
    }
    let n = samples.len() as f64;
    let first = samples[0];
    let var = if samples.iter().all(|&x| x == first) {
        0.0
    } else {
        let mean = samples.iter().sum::<f64>() / n;
        samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
    };
    let std = libm::sqrt(var);
    Ok(SdfReport { sdf: 1.0 / (1.0 + std * std), spill_std: std, n_samples: samples.len() })
}

/// Absolute tracking errors `|x_t - reference|`.
pub fn tracking_errors(samples: &[f64], reference: f64) -> Vec<f64> {
    samples.iter().map(|x| (x - reference).abs()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardKind {
    /// `r_t = -EMA(t, alpha)` of the absolute error, `EMA(-1) = 0`.
    NegEma { alpha: f64 },
    /// `r_t = -(1/T) * sum_{tau <= t} |e_tau|`.
    NegSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RewardConfig {
    pub kind: RewardKind,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self::ema(0.5)
    }
}

impl RewardConfig {
    pub fn ema(alpha: f64) -> Self {
        Self { kind: RewardKind::NegEma { alpha } }
    }

    pub fn sum() -> Self {
        Self { kind: RewardKind::NegSum }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            RewardKind::NegEma { alpha } if !(0.0..=1.0).contains(&alpha) => {
                Err(Error::config("alpha", "must lie in [0, 1]"))
            }
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> alloc::string::String {
        match self.kind {
            RewardKind::NegEma { alpha } => alloc::format!("-EMA(alpha={alpha})"),
            RewardKind::NegSum => "-SUM".into(),
        }
    }

    /// Reward series for a whole trace of absolute errors.
    pub fn rewards(&self, errors: &[f64], steps_per_episode: usize) -> Result<Vec<f64>> {
        self.validate()?;
        let mut tracker = RewardTracker::new(*self, steps_per_episode);
        Ok(errors.iter().map(|&e| tracker.push(e)).collect())
    }
}

/// Online reward evaluation, one absolute error at a time. Produces exactly
/// the same floating-point values as [`RewardConfig::rewards`].
#[derive(Debug, Clone)]
pub struct RewardTracker {
    cfg: RewardConfig,
    scale: f64,
    acc: f64,
}

impl RewardTracker {
    pub fn new(cfg: RewardConfig, steps_per_episode: usize) -> Self {
        Self { cfg, scale: steps_per_episode as f64, acc: 0.0 }
    }

    pub fn push(&mut self, error: f64) -> f64 {
        match self.cfg.kind {
            RewardKind::NegEma { alpha } => {
                self.acc = alpha * error + (1.0 - alpha) * self.acc;
                -self.acc
            }
            RewardKind::NegSum => {
                self.acc += error;
                -(self.acc / self.scale)
            }
        }
    }
}

/// Rewards `r_t = -EMA(t, alpha)` via the recursion, seeded with `EMA(-1) = 0`.
pub fn ema_rewards(errors: &[f64], alpha: f64) -> Result<Vec<f64>> {
    RewardConfig::ema(alpha).rewards(errors, errors.len().max(1))
}

/// `EMA(t, alpha)` by direct summation of `alpha (1-alpha)^(t-tau) e_tau`.
/// Reference for the recursive form; quadratic if called for every `t`.
pub fn ema_direct(errors: &[f64], alpha: f64, t: usize) -> f64 {
    let decay = 1.0 - alpha;
    let mut total = 0.0;
    for (tau, e) in errors[..=t].iter().enumerate() {
        total += alpha * libm::pow(decay, (t - tau) as f64) * e;
    }
    total
}

/// Relative improvement of `sdf_a` over `sdf_b`, in percent.
pub fn improvement(sdf_a: f64, sdf_b: f64) -> f64 {
    100.0 * (sdf_a - sdf_b) / sdf_b
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub sdf_noise: f64,
    pub sdf_pid: f64,
    pub sdf_rl: f64,
    pub vs_pid_pct: f64,
    pub vs_noise_pct: f64,
}

impl SeedReport {
    pub fn new(seed: u64, sdf_noise: f64, sdf_pid: f64, sdf_rl: f64) -> Self {
        Self {
            seed,
            sdf_noise,
            sdf_pid,
            sdf_rl,
            vs_pid_pct: improvement(sdf_rl, sdf_pid),
            vs_noise_pct: improvement(sdf_rl, sdf_noise),
        }
    }
}

/// Per-seed SDFs with both aggregation conventions: the mean of per-seed
/// percentages (headline) and the percentage between mean SDFs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementReport {
    pub per_seed: Vec<SeedReport>,
    pub mean_sdf_noise: f64,
    pub mean_sdf_pid: f64,
    pub mean_sdf_rl: f64,
    pub vs_pid_pct: f64,
    pub vs_noise_pct: f64,
    pub vs_pid_pct_of_means: f64,
    pub vs_noise_pct_of_means: f64,
}

impl ImprovementReport {
    pub fn from_seeds(per_seed: Vec<SeedReport>) -> Result<Self> {
        if per_seed.is_empty() {
            return Err(Error::InvalidInput("improvement report needs at least one seed".into()));
        }
        let n = per_seed.len() as f64;
        let mean = |f: fn(&SeedReport) -> f64| per_seed.iter().map(f).sum::<f64>() / n;
        let mean_sdf_noise = mean(|r| r.sdf_noise);
        let mean_sdf_pid = mean(|r| r.sdf_pid);
        let mean_sdf_rl = mean(|r| r.sdf_rl);
        let vs_pid_pct = mean(|r| r.vs_pid_pct);
        let vs_noise_pct = mean(|r| r.vs_noise_pct);
        Ok(Self {
            mean_sdf_noise,
            mean_sdf_pid,
            mean_sdf_rl,
            vs_pid_pct,
            vs_noise_pct,
            vs_pid_pct_of_means: improvement(mean_sdf_rl, mean_sdf_pid),
            vs_noise_pct_of_means: improvement(mean_sdf_rl, mean_sdf_noise),
            per_seed,
        })
    }
}

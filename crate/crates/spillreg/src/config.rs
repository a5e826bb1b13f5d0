//! Run configuration: JSON file schema, named variants and flag overrides.
//!
//! A config file is a JSON object with optional sections `env`, `train`,
//! `reward`, `variant` and `pid`, plus an optional top-level `seed`. Every
//! field falls back to its built-in default; unknown fields are rejected.
//! A run manifest is also accepted in place of a config file, in which case
//! its recorded configuration is used.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use spillreg_core::{
    EnvConfig, PidGains, PidGrid, PolicyVariant, RewardConfig, StateVariant, TrainConfig,
};

use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariantConfig {
    pub policy: PolicyVariant,
    pub state: StateVariant,
}

/// Gains given explicitly; `dt` comes from the environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PidConfig {
    pub grid: PidGrid,
    /// Seeds averaged by the tuner; the training seeds when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tune_seeds: Option<Vec<u64>>,
    /// Skip tuning and use these gains.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gains: Option<FixedGains>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed. Seeds training, and is the episode seed for `simulate`.
    /// Falls back to `train.master_seed`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub reward: RewardConfig,
    pub variant: VariantConfig,
    pub pid: PidConfig,
}

/// Values given on the command line; they win over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub iterations: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub variant: Option<Preset>,
}

impl RunConfig {
    pub fn from_json_str(text: &str, origin: &Path) -> AppResult<Self> {
        let mut value: serde_json::Value = serde_json::from_str(text).map_err(AppError::json(origin))?;
        if let Some(obj) = value.as_object_mut() {
            if obj.contains_key("manifest_version") {
                value = obj
                    .remove("config")
                    .ok_or_else(|| AppError::Config(format!("{}: manifest has no `config`", origin.display())))?;
            }
        }
        serde_json::from_value(value).map_err(AppError::json(origin))
    }

    pub fn load(path: &Path) -> AppResult<Self> {
        let text = std::fs::read_to_string(path).map_err(AppError::io(path))?;
        Self::from_json_str(&text, path)
    }

    /// Default config, or the file at `path`, with `overrides` applied and
    /// the master seed made explicit.
    pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> AppResult<Self> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(preset) = o.variant {
            preset.apply(self);
        }
        if let Some(n) = o.iterations {
            self.train.iterations = n;
        }
        if let Some(seeds) = &o.seeds {
            self.train.seeds = seeds.clone();
        }
        let seed = o.seed.or(self.seed).unwrap_or(self.train.master_seed);
        self.seed = Some(seed);
        self.train.master_seed = seed;
    }

    pub fn master_seed(&self) -> u64 {
        self.seed.unwrap_or(self.train.master_seed)
    }

    pub fn validate(&self) -> AppResult<()> {
        self.env.validate()?;
        self.train.validate(&self.env)?;
        self.reward.validate()?;
        if let Some(seed) = self.seed {
            if seed != self.train.master_seed {
                return Err(AppError::Config(format!(
                    "seed ({seed}) and train.master_seed ({}) disagree; set only one",
                    self.train.master_seed
                )));
            }
        }
        if let Some(seeds) = &self.pid.tune_seeds {
            if seeds.is_empty() {
                return Err(AppError::Config("pid.tune_seeds must not be empty".into()));
            }
        }
        if let Some(g) = self.pid.gains {
            self.fixed_gains(g).validate()?;
        }
        Ok(())
    }

    pub fn tune_seeds(&self) -> &[u64] {
        self.pid.tune_seeds.as_deref().unwrap_or(&self.train.seeds)
    }

    pub fn fixed_gains(&self, g: FixedGains) -> PidGains {
        PidGains::new(g.kp, g.ki, g.kd, self.env.dt)
    }
}

/// Named experiment rows: each fixes the policy family, the state features
/// and the reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    Main,
    Alpha01,
    Alpha09,
    NegSum,
    Nn,
    Pid3,
    CdOver,
}

impl Preset {
    /// Ablation order; the main configuration comes last.
    pub const ALL: [Preset; 7] =
        [Preset::Alpha01, Preset::Alpha09, Preset::NegSum, Preset::Nn, Preset::Pid3, Preset::CdOver, Preset::Main];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Main => "main",
            Preset::Alpha01 => "alpha-0.1",
            Preset::Alpha09 => "alpha-0.9",
            Preset::NegSum => "neg-sum",
            Preset::Nn => "nn",
            Preset::Pid3 => "pid3",
            Preset::CdOver => "cd-over1",
        }
    }

    pub fn policy(self) -> PolicyVariant {
        match self {
            Preset::Nn => PolicyVariant::Mlp,
            _ => PolicyVariant::NeuralPid,
        }
    }

    pub fn state(self) -> StateVariant {
        match self {
            Preset::Pid3 => StateVariant::Pid3,
            Preset::CdOver => StateVariant::CdOver,
            _ => StateVariant::PidAct,
        }
    }

    pub fn reward(self) -> RewardConfig {
        match self {
            Preset::Alpha01 => RewardConfig::ema(0.1),
            Preset::Alpha09 => RewardConfig::ema(0.9),
            Preset::NegSum => RewardConfig::sum(),
            _ => RewardConfig::ema(0.5),
        }
    }

    pub fn apply(self, cfg: &mut RunConfig) {
        cfg.variant = VariantConfig { policy: self.policy(), state: self.state() };
        cfg.reward = self.reward();
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            let names: Vec<_> = Preset::ALL.iter().map(|p| p.name()).collect();
            format!("unknown variant `{s}` (expected one of: {})", names.join(", "))
        })
    }
}

/// Parse `0,1,2` or a range `0..9` (end exclusive).
pub fn parse_seed_list(s: &str) -> Result<Vec<u64>, String> {
    let s = s.trim();
    let seeds = if let Some((lo, hi)) = s.split_once("..") {
        let lo: u64 = lo.trim().parse().map_err(|e| format!("bad range start `{lo}`: {e}"))?;
        let hi: u64 = hi.trim().parse().map_err(|e| format!("bad range end `{hi}`: {e}"))?;
        (lo..hi).collect()
    } else {
        s.split(',')
            .map(|t| t.trim().parse::<u64>().map_err(|e| format!("bad seed `{t}`: {e}")))
            .collect::<Result<Vec<_>, _>>()?
    };
    if seeds.is_empty() {
        return Err("seed list is empty".into());
    }
    Ok(seeds)
}

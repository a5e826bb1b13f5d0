//! On-disk formats.
//!
//! * trace CSV: `t,raw,corrected,action`, 9 significant digits
//! * curve CSV: `iter,seed,mean_reward,sdf_rl,sdf_pid,sdf_noise`
//! * report, gains, policy and checkpoint JSON, each carrying a
//!   `format_version` and the name of the manifest that produced it

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use spillreg_core::controllers::MlpPolicy;
use spillreg_core::gradnet::Layer;
use spillreg_core::ppo::{Critic, CurveRow, Learner};
use spillreg_core::{
    Activation, DenseNet, Episode, ImprovementReport, Optimizer, PidGains, Policy, PolicyParams,
    PolicyVariant, StateVariant,
};

use crate::error::{AppError, AppResult};
use crate::numfmt::sig9;

pub const TRACE_HEADER: [&str; 4] = ["t", "raw", "corrected", "action"];
pub const CURVE_HEADER: [&str; 6] = ["iter", "seed", "mean_reward", "sdf_rl", "sdf_pid", "sdf_noise"];

pub const REPORT_VERSION: u64 = 1;
pub const GAINS_VERSION: u64 = 1;
pub const POLICY_VERSION: u64 = 1;
pub const CHECKPOINT_VERSION: u64 = 1;

pub fn write_text(path: &Path, text: &str) -> AppResult<()> {
    fs::write(path, text).map_err(AppError::io(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> AppResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(AppError::json(path))?;
    text.push('\n');
    write_text(path, &text)
}

/// Read a versioned JSON document, checking `format_version` before the
/// rest of the schema so that old or future files fail with a clear error.
pub fn read_versioned<T: DeserializeOwned>(path: &Path, kind: &'static str, expected: u64) -> AppResult<T> {
    let text = fs::read_to_string(path).map_err(AppError::io(path))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(AppError::json(path))?;
    let found = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| AppError::Config(format!("{}: missing {kind} `format_version`", path.display())))?;
    if found != expected {
        return Err(AppError::Version { path: path.into(), kind, found, expected });
    }
    serde_json::from_value(value).map_err(AppError::json(path))
}

// ---- traces ---------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub raw: f64,
    pub corrected: f64,
    pub action: f64,
}

pub fn write_trace(path: &Path, episode: &Episode) -> AppResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(AppError::csv(path))?;
    w.write_record(TRACE_HEADER).map_err(AppError::csv(path))?;
    let rows = episode.raw.samples().iter().zip(episode.corrected.samples()).zip(episode.actions.samples());
    for (t, ((raw, corrected), action)) in rows.enumerate() {
        w.write_record([t.to_string(), sig9(*raw), sig9(*corrected), sig9(*action)])
            .map_err(AppError::csv(path))?;
    }
    w.flush().map_err(AppError::io(path))
}

pub fn read_trace(path: &Path) -> AppResult<Vec<TraceRow>> {
    let mut r = csv::Reader::from_path(path).map_err(AppError::csv(path))?;
    check_header(path, r.headers().map_err(AppError::csv(path))?, &TRACE_HEADER)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(AppError::csv(path))?;
        rows.push(TraceRow {
            t: parse_field(path, &rec, 0)?,
            raw: parse_field(path, &rec, 1)?,
            corrected: parse_field(path, &rec, 2)?,
            action: parse_field(path, &rec, 3)?,
        });
    }
    Ok(rows)
}

// ---- training curves ------------------------------------------------------

pub fn write_curve(path: &Path, rows: &[CurveRow]) -> AppResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(AppError::csv(path))?;
    w.write_record(CURVE_HEADER).map_err(AppError::csv(path))?;
    for r in rows {
        w.write_record([
            r.iter.to_string(),
            r.seed.to_string(),
            r.mean_reward.to_string(),
            r.sdf_rl.to_string(),
            r.sdf_pid.to_string(),
            r.sdf_noise.to_string(),
        ])
        .map_err(AppError::csv(path))?;
    }
    w.flush().map_err(AppError::io(path))
}

pub fn read_curve(path: &Path) -> AppResult<Vec<CurveRow>> {
    let mut r = csv::Reader::from_path(path).map_err(AppError::csv(path))?;
    check_header(path, r.headers().map_err(AppError::csv(path))?, &CURVE_HEADER)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(AppError::csv(path))?;
        rows.push(CurveRow {
            iter: parse_field(path, &rec, 0)?,
            seed: parse_field(path, &rec, 1)?,
            mean_reward: parse_field(path, &rec, 2)?,
            sdf_rl: parse_field(path, &rec, 3)?,
            sdf_pid: parse_field(path, &rec, 4)?,
            sdf_noise: parse_field(path, &rec, 5)?,
        });
    }
    Ok(rows)
}

fn check_header(path: &Path, got: &csv::StringRecord, expected: &[&str]) -> AppResult<()> {
    if got.iter().ne(expected.iter().copied()) {
        return Err(AppError::Config(format!(
            "{}: expected header `{}`, found `{}`",
            path.display(),
            expected.join(","),
            got.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize) -> AppResult<T>
where
    T::Err: std::fmt::Display,
{
    let line = rec.position().map_or(0, |p| p.line());
    let raw = rec.get(i).ok_or_else(|| AppError::Config(format!("{}:{line}: missing column {i}", path.display())))?;
    raw.parse()
        .map_err(|e| AppError::Config(format!("{}:{line}: bad value `{raw}`: {e}", path.display())))
}

// ---- evaluation report ----------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub seeds: usize,
    pub mean_sdf_noise: f64,
    pub mean_sdf_pid: f64,
    pub mean_sdf_rl: f64,
    /// Mean of per-seed percentages.
    pub vs_pid_pct: f64,
    pub vs_noise_pct: f64,
    /// Percentages between the mean SDFs.
    pub vs_pid_pct_of_means: f64,
    pub vs_noise_pct_of_means: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportFile {
    pub format_version: u64,
    pub manifest: String,
    pub per_seed: Vec<spillreg_core::metrics::SeedReport>,
    pub aggregate: Aggregate,
}

impl ReportFile {
    pub fn new(report: &ImprovementReport, manifest: &str) -> Self {
        Self {
            format_version: REPORT_VERSION,
            manifest: manifest.into(),
            per_seed: report.per_seed.clone(),
            aggregate: Aggregate {
                seeds: report.per_seed.len(),
                mean_sdf_noise: report.mean_sdf_noise,
                mean_sdf_pid: report.mean_sdf_pid,
                mean_sdf_rl: report.mean_sdf_rl,
                vs_pid_pct: report.vs_pid_pct,
                vs_noise_pct: report.vs_noise_pct,
                vs_pid_pct_of_means: report.vs_pid_pct_of_means,
                vs_noise_pct_of_means: report.vs_noise_pct_of_means,
            },
        }
    }

    pub fn read(path: &Path) -> AppResult<Self> {
        read_versioned(path, "report", REPORT_VERSION)
    }
}

// ---- PID gains ------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsFile {
    pub format_version: u64,
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub dt: f64,
    /// Mean SDF over the tuning seeds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_sdf: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tune_seeds: Option<Vec<u64>>,
    pub manifest: String,
}

impl GainsFile {
    pub fn new(gains: &PidGains, manifest: &str) -> Self {
        Self {
            format_version: GAINS_VERSION,
            kp: gains.kp,
            ki: gains.ki,
            kd: gains.kd,
            dt: gains.dt,
            mean_sdf: None,
            tune_seeds: None,
            manifest: manifest.into(),
        }
    }

    pub fn gains(&self) -> PidGains {
        PidGains::new(self.kp, self.ki, self.kd, self.dt)
    }

    pub fn read(path: &Path) -> AppResult<Self> {
        read_versioned(path, "gains", GAINS_VERSION)
    }
}

// ---- neuralized-PID policy ------------------------------------------------

/// Flat, named form of [`PolicyParams`]. Weights absent from the state
/// variant are omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyFile {
    pub format_version: u64,
    pub state: StateVariant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_i: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_cd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_over1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_act: Option<f64>,
    pub bias: f64,
    pub log_std: f64,
    pub manifest: String,
}

impl PolicyFile {
    pub fn new(params: &PolicyParams, manifest: &str) -> Self {
        let mut f = Self {
            format_version: POLICY_VERSION,
            state: params.variant,
            w_p: None,
            w_i: None,
            w_d: None,
            w_cd: None,
            w_over1: None,
            w_act: None,
            bias: params.bias,
            log_std: params.log_std,
            manifest: manifest.into(),
        };
        for (name, w) in params.variant.feature_names().iter().zip(&params.weights) {
            *f.slot(name) = Some(*w);
        }
        f
    }

    fn slot(&mut self, feature: &str) -> &mut Option<f64> {
        match feature {
            "p" => &mut self.w_p,
            "i" => &mut self.w_i,
            "d" => &mut self.w_d,
            "cd" => &mut self.w_cd,
            "over1" => &mut self.w_over1,
            "act" => &mut self.w_act,
            other => unreachable!("unknown feature {other}"),
        }
    }

    pub fn params(&self) -> AppResult<PolicyParams> {
        let mut copy = self.clone();
        let names = self.state.feature_names();
        let weights = names
            .iter()
            .map(|n| copy.slot(n).take().ok_or_else(|| AppError::Config(format!("policy is missing `w_{n}`"))))
            .collect::<AppResult<Vec<_>>>()?;
        let leftover = [copy.w_p, copy.w_i, copy.w_d, copy.w_cd, copy.w_over1, copy.w_act];
        if leftover.iter().any(Option::is_some) {
            return Err(AppError::Config(format!("policy has weights not used by state `{}`", self.state.label())));
        }
        Ok(PolicyParams { variant: self.state, weights, bias: self.bias, log_std: self.log_std })
    }

    pub fn read(path: &Path) -> AppResult<Self> {
        read_versioned(path, "policy", POLICY_VERSION)
    }
}

// ---- checkpoints ----------------------------------------------------------

/// Dense network as layer sizes, activations and one flat parameter array
/// (per layer: row-major weights, then biases).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetRecord {
    pub layer_dims: Vec<usize>,
    pub activations: Vec<Activation>,
    pub params: Vec<f64>,
}

impl NetRecord {
    pub fn from_net(net: &DenseNet) -> Self {
        Self {
            layer_dims: net.dims(),
            activations: net.layers().iter().map(|l| l.activation).collect(),
            params: net.params(),
        }
    }

    pub fn to_net(&self) -> AppResult<DenseNet> {
        if self.layer_dims.len() != self.activations.len() + 1 {
            return Err(AppError::Config(format!(
                "checkpoint network has {} layer sizes but {} activations",
                self.layer_dims.len(),
                self.activations.len()
            )));
        }
        let layers = self
            .layer_dims
            .windows(2)
            .zip(&self.activations)
            .map(|(d, &act)| Layer::zeros(d[0], d[1], act))
            .collect();
        let mut net = DenseNet::new(layers)?;
        net.set_params(&self.params)?;
        Ok(net)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorRecord {
    pub policy: PolicyVariant,
    /// The linear policy is stored as a single identity layer.
    pub net: NetRecord,
    pub log_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticRecord {
    pub net: NetRecord,
    pub output_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u64,
    /// Completed training iterations.
    pub iteration: usize,
    pub state: StateVariant,
    pub gains: PidGains,
    pub feature_scale: Vec<f64>,
    pub actor: ActorRecord,
    pub critic: CriticRecord,
    pub actor_optimizer: Optimizer,
    pub critic_optimizer: Optimizer,
    pub manifest: String,
}

impl Checkpoint {
    pub fn new(learner: &Learner, gains: &PidGains, iteration: usize, manifest: &str) -> AppResult<Self> {
        let actor = match &learner.policy {
            Policy::NeuralPid(p) => {
                let mut layer = Layer::zeros(p.weights.len(), 1, Activation::Identity);
                layer.weights.clone_from(&p.weights);
                layer.bias[0] = p.bias;
                ActorRecord {
                    policy: PolicyVariant::NeuralPid,
                    net: NetRecord::from_net(&DenseNet::new(vec![layer])?),
                    log_std: p.log_std,
                }
            }
            Policy::Mlp(m) => {
                ActorRecord { policy: PolicyVariant::Mlp, net: NetRecord::from_net(&m.net), log_std: m.log_std }
            }
        };
        Ok(Self {
            format_version: CHECKPOINT_VERSION,
            iteration,
            state: learner.policy.variant(),
            gains: *gains,
            feature_scale: learner.feature_scale.clone(),
            actor,
            critic: CriticRecord {
                net: NetRecord::from_net(&learner.critic.net),
                output_scale: learner.critic.output_scale,
            },
            actor_optimizer: learner.actor_opt.clone(),
            critic_optimizer: learner.critic_opt.clone(),
            manifest: manifest.into(),
        })
    }

    pub fn policy(&self) -> AppResult<Policy> {
        let net = self.actor.net.to_net()?;
        if net.in_dim() != self.state.dim() || net.out_dim() != 1 {
            return Err(AppError::Config(format!(
                "actor maps {} -> {} but state `{}` has {} features",
                net.in_dim(),
                net.out_dim(),
                self.state.label(),
                self.state.dim()
            )));
        }
        match self.actor.policy {
            PolicyVariant::NeuralPid => {
                let [layer] = net.layers() else {
                    return Err(AppError::Config("linear actor must have exactly one layer".into()));
                };
                if layer.activation != Activation::Identity {
                    return Err(AppError::Config("linear actor must use the identity activation".into()));
                }
                Ok(Policy::NeuralPid(PolicyParams {
                    variant: self.state,
                    weights: layer.weights.clone(),
                    bias: layer.bias[0],
                    log_std: self.actor.log_std,
                }))
            }
            PolicyVariant::Mlp => Ok(Policy::Mlp(MlpPolicy {
                variant: self.state,
                net,
                log_std: self.actor.log_std,
                input_scale: self.feature_scale.clone(),
            })),
        }
    }

    pub fn learner(&self) -> AppResult<Learner> {
        let policy = self.policy()?;
        let critic = Critic {
            net: self.critic.net.to_net()?,
            input_scale: self.feature_scale.clone(),
            output_scale: self.critic.output_scale,
        };
        Ok(Learner {
            policy,
            critic,
            feature_scale: self.feature_scale.clone(),
            actor_opt: self.actor_optimizer.clone(),
            critic_opt: self.critic_optimizer.clone(),
        })
    }

    pub fn write(&self, path: &Path) -> AppResult<()> {
        write_json(path, self)
    }

    pub fn read(path: &Path) -> AppResult<Self> {
        read_versioned(path, "checkpoint", CHECKPOINT_VERSION)
    }
}

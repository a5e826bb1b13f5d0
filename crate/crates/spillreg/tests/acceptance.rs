//! Acceptance suite: every criterion at its stated tolerance, one PASS/FAIL
//! line each. Runs as a plain binary (`harness = false`); the process fails
//! if any criterion does.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use spillreg::commands::{resolve_gains, AblationFile};
use spillreg::files::ReportFile;
use spillreg::{Preset, RunConfig};
use spillreg_core::controllers::{run_pid_episode, ErrorState, MlpPolicy};
use spillreg_core::metrics::ema_rewards;
use spillreg_core::ppo::{gae, Critic};
use spillreg_core::*;

const BIN: &str = env!("CARGO_BIN_EXE_spillreg");

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion<'a> = (&'static str, &'static str, Box<dyn FnOnce() -> Result<Outcome, String> + 'a>);

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn spillreg(args: &[&str]) -> Result<String, String> {
    let out = Command::new(BIN).args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "`spillreg {}` exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn within(elapsed: Duration, limit: Duration) -> bool {
    elapsed < limit
}

// ---- C1 -------------------------------------------------------------------

fn c1_ema_oracle() -> Result<Outcome, String> {
    let start = Instant::now();
    let mut rng = SimRng::seed_from_u64(101);
    let series: Vec<Vec<f64>> = (0..1000).map(|_| (0..430).map(|_| rng.uniform_range(0.0, 2.0)).collect()).collect();
    let mut worst: f64 = 0.0;
    for alpha in [0.0f64, 0.1, 0.5, 0.9, 1.0] {
        // alpha (1 - alpha)^k, each power evaluated directly
        let weights: Vec<f64> = (0..430).map(|k| alpha * (1.0 - alpha).powf(k as f64)).collect();
        for errors in &series {
            let recursive = ema_rewards(errors, alpha).map_err(|e| e.to_string())?;
            for t in 0..errors.len() {
                let direct: f64 = (0..=t).map(|tau| weights[t - tau] * errors[tau]).sum();
                worst = worst.max((recursive[t] + direct).abs());
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-12 && within(elapsed, Duration::from_secs(5));
    Ok(outcome(pass, format!("max |EMA recursive - direct| = {worst:.2e} (tol 1e-12), {elapsed:.2?} (limit 5 s)")))
}

// ---- C2 -------------------------------------------------------------------

fn c2_gradients() -> Result<Outcome, String> {
    const DRAWS: usize = 100;
    let start = Instant::now();
    let mut rng = SimRng::seed_from_u64(202);

    let mut linear: f64 = 0.0;
    for i in 0..DRAWS {
        let variant = StateVariant::ALL[i % StateVariant::ALL.len()];
        let mut policy = Policy::NeuralPid(PolicyParams { variant, weights: vec![0.0; variant.dim()], bias: 0.0, log_std: -1.0 });
        linear = linear.max(support::check_log_prob(&mut policy, &mut rng));
    }

    let variant = StateVariant::PidAct;
    let mut critic = Critic::new(variant, &[64, 64], support::scales(variant), 1.0, &mut rng).map_err(|e| e.to_string())?;
    let mut value: f64 = 0.0;
    for _ in 0..DRAWS {
        value = value.max(support::check_critic(&mut critic, variant, &mut rng));
    }

    let mut mlp = Policy::Mlp(MlpPolicy::new(variant, &[64, 64], support::scales(variant), &mut rng).map_err(|e| e.to_string())?);
    let mut nn: f64 = 0.0;
    for _ in 0..DRAWS {
        nn = nn.max(support::check_log_prob(&mut mlp, &mut rng));
    }

    let elapsed = start.elapsed();
    let worst = linear.max(value).max(nn);
    let pass = worst < support::TOL && within(elapsed, Duration::from_secs(30));
    Ok(outcome(
        pass,
        format!(
            "max rel err: linear actor {linear:.1e}, 64x64 critic {value:.1e}, 64x64 NN actor {nn:.1e} \
             (tol 1e-4, h = {:e}, {DRAWS} draws each), {elapsed:.2?} (limit 30 s)",
            support::H
        ),
    ))
}

// ---- C3 -------------------------------------------------------------------

fn c3_gae() -> Result<Outcome, String> {
    let mut rng = SimRng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    let mut buffers = 0;
    for n in 1..=8usize {
        for mask in 0u32..(1 << n) {
            let dones: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            let rewards: Vec<f64> = (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
            let values: Vec<f64> = (0..n).map(|_| rng.uniform_range(-2.0, 2.0)).collect();
            for gamma in [0.0, 0.5, 0.99] {
                for lambda in [0.0, 0.5, 0.95, 1.0] {
                    let (adv, _) = gae(&rewards, &values, &dones, gamma, lambda);
                    let want = support::gae_oracle(&rewards, &values, &dones, gamma, lambda);
                    worst = adv.iter().zip(&want).fold(worst, |w, (a, b)| w.max((a - b).abs()));
                    buffers += 1;
                }
            }
        }
    }
    Ok(outcome(worst <= 1e-12, format!("{buffers} buffers (length 1..=8, every done mask), max |err| = {worst:.2e} (tol 1e-12)")))
}

// ---- C4 -------------------------------------------------------------------

fn c4_embedding(work: &Path) -> Result<Outcome, String> {
    let mut rng = SimRng::seed_from_u64(404);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let gains = PidGains::new(rng.uniform_range(0.0, 2.0), rng.uniform_range(0.0, 2.0), rng.uniform_range(0.0, 1e-3), 1e-4);
        let err = ErrorState {
            current_error: rng.uniform_range(-1.0, 1.0),
            error_sum: rng.uniform_range(-50.0, 50.0),
            error_diff_rate: rng.uniform_range(-1e4, 1e4),
            prev_error: 0.0,
            steps: 1 + rng.below(430),
        };
        let prev_action = rng.uniform_range(-1.0, 1.0);
        let params = PolicyParams::from_pid(&gains, StateVariant::PidAct);
        if params.action_weight() != Some(0.0) || params.bias != 0.0 {
            return Ok(outcome(false, "initial policy has a non-zero action weight or bias"));
        }
        let state = StateVector::new(&[err.current_error, err.error_sum, err.error_diff_rate, prev_action])
            .map_err(|e| e.to_string())?;
        let a = policy_mean(&params, &state).map_err(|e| e.to_string())?;
        let b = pid_update(&gains, &err).map_err(|e| e.to_string())?;
        worst = worst.max((a - b).abs());
    }

    let (train, eval) = (work.join("c4-train"), work.join("c4-eval"));
    spillreg(&["train", "--iterations", "0", "--out", s(&train)])?;
    spillreg(&["evaluate", "--checkpoint", s(&train.join("checkpoint.json")), "--out", s(&eval)])?;
    let report = ReportFile::read(&eval.join("report.json")).map_err(|e| e.to_string())?;
    let seed_gap = report.per_seed.iter().map(|r| (r.sdf_rl - r.sdf_pid).abs()).fold(0.0, f64::max);
    let pass = worst <= 1e-12 && seed_gap <= 1e-9 && report.per_seed.len() == 9;
    Ok(outcome(
        pass,
        format!(
            "policy_mean vs pid_update on 1000 states: max |diff| = {worst:.2e} (tol 1e-12); \
             evaluate on initial checkpoint, {} seeds: max |SDF_rl - SDF_pid| = {seed_gap:.2e} (tol 1e-9)",
            report.per_seed.len()
        ),
    ))
}

// ---- C5 -------------------------------------------------------------------

fn c5_sdf_anchors() -> Result<Outcome, String> {
    let constant = sdf(&[0.8; 430]).map_err(|e| e.to_string())?.sdf;
    // {0, 1, 2} has population variance 2/3
    let spread: Vec<f64> = (0..429).map(|i| (i % 3) as f64).collect();
    let anchored = sdf(&spread).map_err(|e| e.to_string())?.sdf;
    let pass = constant == 1.0 && (anchored - 0.6).abs() <= 1e-12;
    Ok(outcome(pass, format!("constant trace SDF = {constant}; variance-2/3 trace SDF = {anchored:.15} (0.6 +- 1e-12)")))
}

// ---- C6 -------------------------------------------------------------------

fn c6_baselines() -> Result<Outcome, String> {
    let start = Instant::now();
    let cfg = RunConfig::default();
    let (gains, _) = resolve_gains(&cfg).map_err(|e| e.to_string())?;
    let mut beats_noise = true;
    let mut total_pid = 0.0;
    let mut total_noise = 0.0;
    for &seed in &cfg.train.seeds {
        let ep = run_pid_episode(&cfg.env, seed, &gains).map_err(|e| e.to_string())?;
        let pid = sdf(ep.corrected.samples()).map_err(|e| e.to_string())?.sdf;
        let noise = sdf(ep.raw.samples()).map_err(|e| e.to_string())?.sdf;
        beats_noise &= pid > noise;
        total_pid += pid;
        total_noise += noise;
    }
    let n = cfg.train.seeds.len() as f64;
    let (mean_pid, mean_noise) = (total_pid / n, total_noise / n);
    let elapsed = start.elapsed();
    let pass = beats_noise && mean_pid >= 0.6 && within(elapsed, Duration::from_secs(120));
    Ok(outcome(
        pass,
        format!(
            "tuned PID (kp {}, ki {}, kd {}) beats unregulated on every seed: {beats_noise}; mean SDF PID {mean_pid:.4} \
             (>= 0.6), unregulated {mean_noise:.4}; ou_sigma {}; {elapsed:.2?} (limit 2 min)",
            gains.kp, gains.ki, gains.kd, cfg.env.ou_sigma
        ),
    ))
}

// ---- C7 / C8 ---------------------------------------------------------------

fn c7_training(run: &Path) -> Result<Outcome, String> {
    let start = Instant::now();
    spillreg(&["train", "--out", s(run)])?;
    let elapsed = start.elapsed();
    let report = ReportFile::read(&run.join("report.json")).map_err(|e| e.to_string())?;
    let a = report.aggregate;
    let vs_noise = improvement(a.mean_sdf_rl, a.mean_sdf_noise);
    let vs_pid = improvement(a.mean_sdf_rl, a.mean_sdf_pid);
    let pass = vs_noise >= 5.0 && a.mean_sdf_rl >= a.mean_sdf_pid * (1.0 - 0.005);
    Ok(outcome(
        pass,
        format!(
            "600 iterations, master seed 0: mean SDF RL {:.4}, PID {:.4}, unregulated {:.4}; \
             vs noise {vs_noise:+.2}% (>= +5), vs PID {vs_pid:+.2}% (>= -0.5); {elapsed:.1?} (target 15 min); \
             reference scale on the original simulator: +13.67% / +1.65%",
            a.mean_sdf_rl, a.mean_sdf_pid, a.mean_sdf_noise
        ),
    ))
}

fn c8_determinism(first: &Path, second: &Path) -> Result<Outcome, String> {
    spillreg(&["train", "--config", s(&first.join("manifest.json")), "--out", s(second)])?;
    let mut details = Vec::new();
    let mut pass = true;
    for f in ["curve.csv", "checkpoint.json"] {
        let a = fs::read(first.join(f)).map_err(|e| format!("{f}: {e}"))?;
        let b = fs::read(second.join(f)).map_err(|e| format!("{f}: {e}"))?;
        pass &= a == b;
        details.push(format!("{f} {} ({} bytes)", if a == b { "identical" } else { "DIFFERS" }, a.len()));
    }
    Ok(outcome(pass, format!("rerun from manifest: {}", details.join(", "))))
}

// ---- C9 -------------------------------------------------------------------

fn c9_ablation(out: &Path) -> Result<Outcome, String> {
    let start = Instant::now();
    spillreg(&["ablate", "--out", s(out)])?;
    let elapsed = start.elapsed();
    let text = fs::read_to_string(out.join("ablation.json")).map_err(|e| e.to_string())?;
    let file: AblationFile = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let vs_noise = |p: Preset| file.row(p).and_then(|r| r.vs_noise);
    let (Some(main), Some(neg_sum)) = (vs_noise(Preset::Main), vs_noise(Preset::NegSum)) else {
        return Ok(outcome(false, "main or neg-sum row failed to train"));
    };
    let rows: Vec<String> = file
        .rows
        .iter()
        .map(|r| format!("{} {}", r.variant, r.vs_noise.map_or("failed".into(), |v| format!("{v:+.2}"))))
        .collect();
    Ok(outcome(
        main > neg_sum,
        format!(
            "{} iterations, seeds {:?}: main vs_noise {main:+.3}% > neg-sum {neg_sum:+.3}% \
             (original ordering 13.67 vs -10.06); rows [{}]; {elapsed:.1?} (limit 2 h)",
            file.iterations,
            file.seeds,
            rows.join(", ")
        ),
    ))
}

fn main() {
    let work = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = fs::remove_dir_all(&work);
    fs::create_dir_all(&work).expect("create scratch directory");
    println!("acceptance artifacts in {}", work.display());

    let (first, second) = (work.join("c7-train"), work.join("c8-rerun"));
    let criteria: Vec<Criterion> = vec![
        ("C1", "EMA oracle equivalence", Box::new(c1_ema_oracle)),
        ("C2", "gradient checks", Box::new(c2_gradients)),
        ("C3", "GAE brute-force equivalence", Box::new(c3_gae)),
        ("C4", "embedding equivalence", Box::new(|| c4_embedding(&work))),
        ("C5", "SDF unit anchors", Box::new(c5_sdf_anchors)),
        ("C6", "baseline ordering", Box::new(c6_baselines)),
        ("C7", "training efficacy", Box::new(|| c7_training(&first))),
        ("C8", "determinism", Box::new(|| c8_determinism(&first, &second))),
        ("C9", "ablation ordering", Box::new(|| c9_ablation(&work.join("c9-ablate")))),
    ];

    let mut failed = Vec::new();
    for (id, name, run) in criteria {
        let result = run().unwrap_or_else(|e| outcome(false, format!("error: {e}")));
        let verdict = if result.pass { "PASS" } else { "FAIL" };
        println!("{id} {verdict} {name}: {}", result.detail);
        if !result.pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 9 criteria passed");
    } else {
        println!("acceptance: {} of 9 failed ({})", failed.len(), failed.join(", "));
        std::process::exit(1);
    }
}

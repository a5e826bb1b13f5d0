//! The subcommands, as library functions. Each takes a resolved
//! [`RunConfig`] and an output directory, writes its files plus a
//! manifest, and returns a summary for the terminal.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spillreg_core::controllers::TuneOutcome;
use spillreg_core::ppo::{evaluate_seed, TrainError};
use spillreg_core::{
    run_pid_episode, sdf, train, tune_pid, ImprovementReport, PidGains, Policy, SpillEnv,
};

use crate::config::{Preset, RunConfig};
use crate::error::{AppError, AppResult};
use crate::files::{
    write_curve, write_json, write_text, write_trace, Checkpoint, GainsFile, PolicyFile, ReportFile,
};
use crate::manifest::{RunManifest, MANIFEST_FILE};
use crate::parallel::par_map;

pub const TRACE_FILE: &str = "trace.csv";
pub const PID_TRACE_FILE: &str = "trace_pid.csv";
pub const GAINS_FILE: &str = "gains.json";
pub const CURVE_FILE: &str = "curve.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const POLICY_FILE: &str = "policy.json";
pub const REPORT_FILE: &str = "report.json";
pub const ABLATION_TABLE_FILE: &str = "ablation.md";
pub const ABLATION_FILE: &str = "ablation.json";
pub const PLOT_FILE: &str = "plot.gp";

/// Iterations used by `ablate --reduced`.
pub const REDUCED_ITERATIONS: usize = 150;

pub const ABLATION_VERSION: u64 = 1;
pub const OMITTED_ROWS_NOTE: &str =
    "The SAC row of the original comparison is not reproduced: only PPO is implemented.";

fn prepare(out: &Path) -> AppResult<()> {
    fs::create_dir_all(out).map_err(AppError::io(out))
}

/// Fixed gains from the config, or the tuner's choice.
pub fn resolve_gains(cfg: &RunConfig) -> AppResult<(PidGains, Option<TuneOutcome>)> {
    match cfg.pid.gains {
        Some(g) => Ok((cfg.fixed_gains(g), None)),
        None => {
            let tuned = tune_pid(&cfg.env, cfg.tune_seeds(), &cfg.pid.grid)?;
            Ok((tuned.gains, Some(tuned)))
        }
    }
}

fn gains_file(gains: &PidGains, tuned: Option<&TuneOutcome>, cfg: &RunConfig) -> GainsFile {
    let mut f = GainsFile::new(gains, MANIFEST_FILE);
    if let Some(t) = tuned {
        f.mean_sdf = Some(t.mean_sdf);
        f.tune_seeds = Some(cfg.tune_seeds().to_vec());
    }
    f
}

/// Noise / PID / RL SDFs on each seed, fanned out over `threads`.
pub fn evaluate_policy(
    policy: &Policy,
    gains: &PidGains,
    cfg: &RunConfig,
    seeds: &[u64],
    threads: usize,
) -> AppResult<ImprovementReport> {
    let per_seed = par_map(seeds, threads, |&s| evaluate_seed(policy, gains, &cfg.env, s))?
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ImprovementReport::from_seeds(per_seed)?)
}

// ---- simulate -------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateSummary {
    pub seed: u64,
    pub sdf_raw: f64,
    pub pid: Option<(PidGains, f64)>,
}

pub fn simulate(cfg: &RunConfig, out: &Path, with_pid: bool) -> AppResult<SimulateSummary> {
    prepare(out)?;
    let seed = cfg.master_seed();
    let mut manifest = RunManifest::new("simulate", cfg);
    let open = SpillEnv::reset(cfg.env.clone(), seed)?.run_unregulated()?;
    write_trace(&out.join(TRACE_FILE), &open)?;
    manifest.output(TRACE_FILE);
    let sdf_raw = sdf(open.raw.samples())?.sdf;
    let pid = if with_pid {
        let (gains, tuned) = resolve_gains(cfg)?;
        let ep = run_pid_episode(&cfg.env, seed, &gains)?;
        write_trace(&out.join(PID_TRACE_FILE), &ep)?;
        write_json(&out.join(GAINS_FILE), &gains_file(&gains, tuned.as_ref(), cfg))?;
        manifest.output(PID_TRACE_FILE);
        manifest.output(GAINS_FILE);
        Some((gains, sdf(ep.corrected.samples())?.sdf))
    } else {
        None
    };
    manifest.write(out)?;
    Ok(SimulateSummary { seed, sdf_raw, pid })
}

// ---- tune-pid -------------------------------------------------------------

pub fn tune(cfg: &RunConfig, out: &Path) -> AppResult<TuneOutcome> {
    prepare(out)?;
    let tuned = tune_pid(&cfg.env, cfg.tune_seeds(), &cfg.pid.grid)?;
    let mut manifest = RunManifest::new("tune-pid", cfg);
    write_json(&out.join(GAINS_FILE), &gains_file(&tuned.gains, Some(&tuned), cfg))?;
    manifest.output(GAINS_FILE);
    manifest.write(out)?;
    Ok(tuned)
}

// ---- train ----------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub gains: PidGains,
    pub report: ImprovementReport,
    pub iterations: usize,
}

pub fn train_run(cfg: &RunConfig, out: &Path) -> AppResult<TrainSummary> {
    prepare(out)?;
    let (gains, tuned) = resolve_gains(cfg)?;
    let mut manifest = RunManifest::new("train", cfg);
    write_json(&out.join(GAINS_FILE), &gains_file(&gains, tuned.as_ref(), cfg))?;
    manifest.output(GAINS_FILE);
    let result = train(&cfg.train, &cfg.env, &cfg.reward, &gains, cfg.variant.policy, cfg.variant.state);
    let outcome = match result {
        Ok(o) => o,
        Err(e) => return Err(record_failure(e, &gains, out, &mut manifest)),
    };
    write_curve(&out.join(CURVE_FILE), &outcome.curve)?;
    manifest.output(CURVE_FILE);
    Checkpoint::new(&outcome.learner, &gains, outcome.curve.len(), MANIFEST_FILE)?.write(&out.join(CHECKPOINT_FILE))?;
    manifest.output(CHECKPOINT_FILE);
    if let Policy::NeuralPid(p) = &outcome.learner.policy {
        write_json(&out.join(POLICY_FILE), &PolicyFile::new(p, MANIFEST_FILE))?;
        manifest.output(POLICY_FILE);
    }
    write_json(&out.join(REPORT_FILE), &ReportFile::new(&outcome.report, MANIFEST_FILE))?;
    manifest.output(REPORT_FILE);
    manifest.write(out)?;
    Ok(TrainSummary { gains, report: outcome.report, iterations: outcome.curve.len() })
}

/// Keep the curve so far and the last good learner, then report.
fn record_failure(e: TrainError, gains: &PidGains, out: &Path, manifest: &mut RunManifest) -> AppError {
    let mut checkpoint = None;
    let mut saved = || -> AppResult<()> {
        write_curve(&out.join(CURVE_FILE), &e.curve)?;
        manifest.output(CURVE_FILE);
        if let Some(learner) = &e.last_good {
            let path = out.join(CHECKPOINT_FILE);
            Checkpoint::new(learner, gains, e.iteration, MANIFEST_FILE)?.write(&path)?;
            manifest.output(CHECKPOINT_FILE);
            checkpoint = Some(path);
        }
        manifest.note("failed_iteration", e.iteration.into());
        manifest.note("error", e.source.to_string().into());
        manifest.write(out)
    };
    if let Err(io) = saved() {
        return io;
    }
    if e.source.is_divergence() {
        AppError::Diverged { message: e.to_string(), checkpoint }
    } else {
        AppError::Core(e.source)
    }
}

// ---- evaluate -------------------------------------------------------------

/// Configuration for evaluating `checkpoint`: the explicit file if given,
/// else the manifest stored beside the checkpoint, else defaults.
pub fn config_for_checkpoint(explicit: Option<&Path>, checkpoint: &Path) -> Option<PathBuf> {
    if let Some(p) = explicit {
        return Some(p.to_path_buf());
    }
    let beside = checkpoint.parent().unwrap_or(Path::new(".")).join(MANIFEST_FILE);
    beside.is_file().then_some(beside)
}

pub fn evaluate_checkpoint(
    cfg: &RunConfig,
    checkpoint_path: &Path,
    seeds: &[u64],
    out: &Path,
    threads: usize,
) -> AppResult<ImprovementReport> {
    prepare(out)?;
    let ckpt = Checkpoint::read(checkpoint_path)?;
    if (ckpt.gains.dt - cfg.env.dt).abs() > 0.0 {
        return Err(AppError::Config(format!(
            "checkpoint gains use dt = {} but the environment has dt = {}",
            ckpt.gains.dt, cfg.env.dt
        )));
    }
    let policy = ckpt.policy()?;
    let report = evaluate_policy(&policy, &ckpt.gains, cfg, seeds, threads)?;
    let mut manifest = RunManifest::new("evaluate", cfg);
    manifest.input("checkpoint", checkpoint_path);
    manifest.note("seeds", serde_json::to_value(seeds).expect("seed list serializes"));
    write_json(&out.join(REPORT_FILE), &ReportFile::new(&report, MANIFEST_FILE))?;
    manifest.output(REPORT_FILE);
    manifest.write(out)?;
    Ok(report)
}

// ---- ablate ---------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub policy: String,
    pub reward: String,
    pub algo: String,
    pub state: String,
    pub vs_pid: Option<f64>,
    pub vs_noise: Option<f64>,
    pub mean_sdf_rl: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub rows_ok: usize,
    pub mean_vs_pid: Option<f64>,
    pub mean_vs_noise: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationFile {
    pub format_version: u64,
    pub manifest: String,
    pub note: String,
    pub iterations: usize,
    pub master_seed: u64,
    pub seeds: Vec<u64>,
    pub gains: PidGains,
    pub mean_sdf_noise: f64,
    pub mean_sdf_pid: f64,
    pub rows: Vec<AblationRow>,
    pub aggregate: AblationSummary,
}

impl AblationFile {
    pub fn row(&self, preset: Preset) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == preset.name())
    }
}

/// Train every preset on the same seed schedule and PID baseline. A failed
/// row is recorded and the others continue.
pub fn ablate(cfg: &RunConfig, out: &Path, threads: usize) -> AppResult<AblationFile> {
    prepare(out)?;
    let (gains, _) = resolve_gains(cfg)?;
    let rows = par_map(&Preset::ALL, threads, |&preset| {
        let mut row_cfg = cfg.clone();
        preset.apply(&mut row_cfg);
        let result = row_cfg.validate().and_then(|_| {
            train(&row_cfg.train, &row_cfg.env, &row_cfg.reward, &gains, preset.policy(), preset.state())
                .map_err(|e| AppError::Core(e.source))
        });
        let mut row = AblationRow {
            variant: preset.name().into(),
            policy: preset.policy().label().into(),
            reward: preset.reward().label(),
            algo: "PPO".into(),
            state: preset.state().label().into(),
            vs_pid: None,
            vs_noise: None,
            mean_sdf_rl: None,
            error: None,
        };
        let report = match result {
            Ok(o) => {
                row.vs_pid = Some(o.report.vs_pid_pct);
                row.vs_noise = Some(o.report.vs_noise_pct);
                row.mean_sdf_rl = Some(o.report.mean_sdf_rl);
                Some(o.report)
            }
            Err(e) => {
                row.error = Some(e.to_string());
                None
            }
        };
        (row, report)
    })?;
    let (mean_sdf_noise, mean_sdf_pid) = match rows.iter().find_map(|(_, r)| r.as_ref()) {
        Some(r) => (r.mean_sdf_noise, r.mean_sdf_pid),
        None => {
            let base = evaluate_policy(
                &Policy::NeuralPid(spillreg_core::PolicyParams::from_pid(&gains, cfg.variant.state)),
                &gains,
                cfg,
                &cfg.train.seeds,
                threads,
            )?;
            (base.mean_sdf_noise, base.mean_sdf_pid)
        }
    };
    let rows: Vec<AblationRow> = rows.into_iter().map(|(row, _)| row).collect();
    let ok: Vec<&AblationRow> = rows.iter().filter(|r| r.error.is_none()).collect();
    let mean = |f: fn(&AblationRow) -> Option<f64>| {
        (!ok.is_empty()).then(|| ok.iter().filter_map(|r| f(r)).sum::<f64>() / ok.len() as f64)
    };
    let file = AblationFile {
        format_version: ABLATION_VERSION,
        manifest: MANIFEST_FILE.into(),
        note: OMITTED_ROWS_NOTE.into(),
        iterations: cfg.train.iterations,
        master_seed: cfg.master_seed(),
        seeds: cfg.train.seeds.clone(),
        gains,
        mean_sdf_noise,
        mean_sdf_pid,
        aggregate: AblationSummary { rows_ok: ok.len(), mean_vs_pid: mean(|r| r.vs_pid), mean_vs_noise: mean(|r| r.vs_noise) },
        rows,
    };
    let mut manifest = RunManifest::new("ablate", cfg);
    manifest.note(
        "seed_schedule",
        serde_json::json!({
            "shared_by_all_rows": true,
            "master_seed": cfg.master_seed(),
            "seeds": cfg.train.seeds,
            "seed_rotation_period": cfg.train.seed_rotation_period,
            "iterations": cfg.train.iterations,
        }),
    );
    write_json(&out.join(ABLATION_FILE), &file)?;
    write_text(&out.join(ABLATION_TABLE_FILE), &ablation_table(&file))?;
    manifest.output(ABLATION_FILE);
    manifest.output(ABLATION_TABLE_FILE);
    manifest.write(out)?;
    Ok(file)
}

fn pct(x: Option<f64>) -> String {
    x.map_or_else(|| "failed".into(), |v| format!("{v:+.3}"))
}

/// Markdown table: a header note, one line per row, an aggregate footer.
pub fn ablation_table(file: &AblationFile) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Ablation\n");
    let _ = writeln!(s, "{}\n", file.note);
    let _ = writeln!(
        s,
        "Seeds {:?}, master seed {}, {} iterations per row. Baselines: mean SDF noise {:.6}, PID {:.6} \
         (kp {}, ki {}, kd {}).\n",
        file.seeds, file.master_seed, file.iterations, file.mean_sdf_noise, file.mean_sdf_pid, file.gains.kp,
        file.gains.ki, file.gains.kd
    );
    let _ = writeln!(s, "| vs_pid | vs_noise | policy | reward | algo | state |");
    let _ = writeln!(s, "|---:|---:|---|---|---|---|");
    for r in &file.rows {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} |",
            pct(r.vs_pid),
            pct(r.vs_noise),
            r.policy,
            r.reward,
            r.algo,
            r.state
        );
    }
    let _ = writeln!(
        s,
        "| {} | {} | mean of {} rows | | | |",
        pct(file.aggregate.mean_vs_pid),
        pct(file.aggregate.mean_vs_noise),
        file.aggregate.rows_ok
    );
    for r in file.rows.iter().filter(|r| r.error.is_some()) {
        let _ = writeln!(s, "\n{} failed: {}", r.variant, r.error.as_deref().unwrap_or_default());
    }
    s
}

// ---- plot-script ----------------------------------------------------------

/// Gnuplot script drawing the training curve and the spill traces found in
/// `data_dir`, rendering PNGs next to them.
pub fn plot_script(data_dir: &str) -> String {
    format!(
        r#"# gnuplot script; run with: gnuplot {PLOT_FILE}
set datafile separator ","
set key autotitle columnhead
set terminal pngcairo size 1000,600
data = "{data_dir}"

if (system("test -f ".data."/{CURVE_FILE} && echo 1") eq "1") {{
    set output data."/curve.png"
    set xlabel "iteration"
    set ylabel "SDF"
    plot data."/{CURVE_FILE}" using 1:4 with lines title "RL", \
         "" using 1:5 with lines title "PID", \
         "" using 1:6 with lines title "unregulated"
}}

if (system("test -f ".data."/{TRACE_FILE} && echo 1") eq "1") {{
    set output data."/trace.png"
    set xlabel "step"
    set ylabel "spill rate"
    if (system("test -f ".data."/{PID_TRACE_FILE} && echo 1") eq "1") {{
        plot data."/{TRACE_FILE}" using 1:2 with lines title "raw", \
             data."/{PID_TRACE_FILE}" using 1:3 with lines title "PID corrected"
    }} else {{
        plot data."/{TRACE_FILE}" using 1:2 with lines title "raw"
    }}
}}
"#
    )
}

pub fn write_plot_script(out: &Path, data_dir: &str) -> AppResult<PathBuf> {
    prepare(out)?;
    let path = out.join(PLOT_FILE);
    write_text(&path, &plot_script(data_dir))?;
    Ok(path)
}

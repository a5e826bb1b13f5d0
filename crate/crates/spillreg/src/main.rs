use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spillreg::commands::{self, REDUCED_ITERATIONS};
use spillreg::config::parse_seed_list;
use spillreg::parallel::thread_cap;
use spillreg::{AppError, AppResult, Overrides, Preset, RunConfig};

#[derive(Parser)]
#[command(name = "spillreg", version, about = "Spill regulation with PID and PPO-trained policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config file, or a manifest from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (episode seed for `simulate`).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct Variant {
    /// Named configuration: main, alpha-0.1, alpha-0.9, neg-sum, nn, pid3, cd-over1.
    #[arg(long)]
    variant: Option<Preset>,
}

/// `0..9` or `1,4,7`.
#[derive(Clone)]
struct SeedList(Vec<u64>);

fn seed_list(s: &str) -> Result<SeedList, String> {
    parse_seed_list(s).map(SeedList)
}

#[derive(Subcommand)]
enum Command {
    /// Write an unregulated spill trace.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Also write the PID-corrected trace.
        #[arg(long)]
        pid: bool,
    },
    /// Grid-search PID gains.
    TunePid {
        #[command(flatten)]
        common: Common,
        /// Seeds averaged by the tuner.
        #[arg(long, value_parser = seed_list)]
        seeds: Option<SeedList>,
    },
    /// Train a policy with PPO.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        variant: Variant,
        #[arg(long)]
        iterations: Option<usize>,
        /// Training and evaluation seeds, e.g. `0..9` or `1,4,7`.
        #[arg(long, value_parser = seed_list)]
        seeds: Option<SeedList>,
    },
    /// Evaluate a checkpoint against the unregulated and PID baselines.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_parser = seed_list)]
        seeds: Option<SeedList>,
    },
    /// Train every variant on a shared seed schedule and tabulate.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        iterations: Option<usize>,
        /// Shorter runs for quick checks.
        #[arg(long, conflicts_with = "iterations")]
        reduced: bool,
        #[arg(long, value_parser = seed_list)]
        seeds: Option<SeedList>,
    },
    /// Write a gnuplot script for the CSV outputs in a directory.
    PlotScript {
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Directory holding curve.csv / trace.csv, as seen from where
        /// gnuplot runs. Defaults to `--out`.
        #[arg(long)]
        data: Option<String>,
    },
}

fn resolve(common: &Common, overrides: Overrides) -> AppResult<RunConfig> {
    RunConfig::resolve(common.config.as_deref(), &Overrides { seed: common.seed, ..overrides })
}

fn run(cli: Cli) -> AppResult<()> {
    match cli.command {
        Command::Simulate { common, pid } => {
            let cfg = resolve(&common, Overrides::default())?;
            let s = commands::simulate(&cfg, &common.out, pid)?;
            println!("seed {}: unregulated SDF {:.6}", s.seed, s.sdf_raw);
            if let Some((g, v)) = s.pid {
                println!("PID (kp {}, ki {}, kd {}): SDF {:.6}", g.kp, g.ki, g.kd, v);
            }
        }
        Command::TunePid { common, seeds } => {
            let seeds = seeds.map(|s| s.0);
            let mut cfg = resolve(&common, Overrides::default())?;
            if seeds.is_some() {
                cfg.pid.tune_seeds = seeds;
            }
            cfg.validate()?;
            let t = commands::tune(&cfg, &common.out)?;
            println!(
                "kp {} ki {} kd {}: mean SDF {:.6} ({} evaluations)",
                t.gains.kp, t.gains.ki, t.gains.kd, t.mean_sdf, t.evaluations
            );
        }
        Command::Train { common, variant, iterations, seeds } => {
            let seeds = seeds.map(|s| s.0);
            let cfg = resolve(&common, Overrides { iterations, seeds, variant: variant.variant, ..Overrides::default() })?;
            let s = commands::train_run(&cfg, &common.out)?;
            let r = &s.report;
            println!("{} iterations; mean SDF noise {:.6}, PID {:.6}, RL {:.6}", s.iterations, r.mean_sdf_noise, r.mean_sdf_pid, r.mean_sdf_rl);
            println!("vs PID {:+.3}%, vs noise {:+.3}%", r.vs_pid_pct, r.vs_noise_pct);
        }
        Command::Evaluate { common, checkpoint, seeds } => {
            let seeds = seeds.map(|s| s.0);
            let config = commands::config_for_checkpoint(common.config.as_deref(), &checkpoint);
            let cfg = RunConfig::resolve(config.as_deref(), &Overrides { seed: common.seed, seeds, ..Overrides::default() })?;
            let r = commands::evaluate_checkpoint(&cfg, &checkpoint, &cfg.train.seeds, &common.out, thread_cap()?)?;
            for s in &r.per_seed {
                println!("seed {}: noise {:.6} PID {:.6} RL {:.6}", s.seed, s.sdf_noise, s.sdf_pid, s.sdf_rl);
            }
            println!("vs PID {:+.3}%, vs noise {:+.3}%", r.vs_pid_pct, r.vs_noise_pct);
        }
        Command::Ablate { common, iterations, reduced, seeds } => {
            let seeds = seeds.map(|s| s.0);
            let iterations = if reduced { Some(REDUCED_ITERATIONS) } else { iterations };
            let cfg = resolve(&common, Overrides { iterations, seeds, ..Overrides::default() })?;
            let f = commands::ablate(&cfg, &common.out, thread_cap()?)?;
            print!("{}", commands::ablation_table(&f));
        }
        Command::PlotScript { out, data } => {
            let data = data.unwrap_or_else(|| out.display().to_string());
            let path = commands::write_plot_script(&out, &data)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("spillreg: {e}");
            if let AppError::Diverged { checkpoint: Some(p), .. } = &e {
                eprintln!("last good checkpoint: {}", p.display());
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use aoi_harness::checks::CheckOptions;
use aoi_harness::commands::{self, EvalOptions, OracleCheckOptions};
use aoi_harness::{load_config, ExperimentConfig, HarnessError, PolicyName, Result};
use clap::{Args, Parser, Subcommand};

/// Freshness-aware NOMA uplink scheduling experiments.
#[derive(Debug, Parser)]
#[command(name = "aoisched", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML configuration; omitted sections and keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `experiment.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `experiment.out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `experiment.policy`.
    #[arg(long, value_enum)]
    policy: Option<PolicyName>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a transformer or mlp policy with PPO.
    Train {
        #[command(flatten)]
        common: Common,
        /// Overrides `ppo.episodes`.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Evaluate a checkpoint or a baseline; writes summary.json and a trace.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Overrides `experiment.eval_episodes`.
        #[arg(long)]
        episodes: Option<usize>,
        /// Checkpoint to load (default: <out>/checkpoints/best.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Sample actions instead of taking the most likely one.
        #[arg(long)]
        stochastic: bool,
    },
    /// Run the self-check suite; exits 1 if any check fails.
    Check {
        #[command(flatten)]
        common: Common,
        /// Actions sampled per policy in the feasibility checks.
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// Frozen states in the oracle-dominance check.
        #[arg(long, default_value_t = 1_000)]
        oracle_states: usize,
    },
    /// Compare the exhaustive one-slot oracle with every other policy.
    OracleCheck {
        #[arg(long, default_value_t = 3)]
        users: usize,
        #[arg(long, default_value_t = 2)]
        subcarriers: usize,
        #[arg(long, default_value_t = 2)]
        levels: usize,
        #[arg(long, default_value_t = 1_000)]
        states: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Split attention snapshots into per-episode matrices plus row entropies.
    ExportAttention {
        /// Run directory.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated episode indices to keep (default: all).
        #[arg(long, value_delimiter = ',')]
        episodes: Option<Vec<usize>>,
    },
    /// Write plot-ready reward curves and attention heatmap grids.
    PlotData {
        /// Directory holding one or more runs.
        #[arg(long)]
        out: PathBuf,
        /// Moving-average window (default: the run's `experiment.smoothing_window`, else 50).
        #[arg(long)]
        window: Option<usize>,
    },
}

fn resolve(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::from_toml_with_env("", std::env::vars())?,
    };
    if let Some(seed) = common.seed {
        cfg.experiment.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.experiment.out = out.clone();
    }
    if let Some(policy) = common.policy {
        cfg.experiment.policy = policy;
    }
    Ok(cfg)
}

fn revalidate(cfg: ExperimentConfig) -> Result<ExperimentConfig> {
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train { common, episodes } => {
            let mut cfg = resolve(&common)?;
            if let Some(e) = episodes {
                cfg.ppo.episodes = e;
            }
            let cfg = revalidate(cfg)?;
            let report = commands::train(&cfg)?;
            println!(
                "trained {} for {} episodes ({} updates); best update mean reward {:.6}; run in {}",
                cfg.experiment.policy.as_str(),
                report.episodes,
                report.updates,
                report.best_mean_reward,
                report.run.root().display()
            );
            Ok(true)
        }
        Command::Eval {
            common,
            episodes,
            checkpoint,
            stochastic,
        } => {
            let mut cfg = resolve(&common)?;
            if let Some(e) = episodes {
                cfg.experiment.eval_episodes = e;
            }
            let cfg = revalidate(cfg)?;
            let s = commands::eval(&cfg, &EvalOptions { checkpoint, stochastic })?;
            println!(
                "{}: mean reward {:.6}, mean AoI {:.4}, violation rate {:.4} over {} episodes",
                s.policy, s.mean_reward, s.mean_aoi, s.violation_rate, s.episodes
            );
            Ok(true)
        }
        Command::Check {
            common,
            samples,
            oracle_states,
        } => {
            let cfg = revalidate(resolve(&common)?)?;
            let opts = CheckOptions {
                seed: cfg.experiment.seed,
                samples,
                oracle_states,
            };
            let reports = commands::check(&cfg, &opts)?;
            for r in &reports {
                println!("{r}");
            }
            let failed = reports.iter().filter(|r| !r.passed).count();
            println!("{} passed, {failed} failed", reports.len() - failed);
            Ok(failed == 0)
        }
        Command::OracleCheck {
            users,
            subcarriers,
            levels,
            states,
            seed,
        } => {
            let r = commands::oracle_check(&OracleCheckOptions {
                users,
                subcarriers,
                levels,
                states,
                seed,
            })?;
            println!("{r}");
            Ok(r.passed)
        }
        Command::ExportAttention { out, episodes } => {
            let report = commands::export(&out, episodes.as_deref())?;
            if report.empty {
                eprintln!("warning: no attention snapshots to export in {}", out.display());
            } else {
                println!("exported {} rows for episodes {:?}", report.rows, report.episodes);
            }
            Ok(true)
        }
        Command::PlotData { out, window } => {
            let window = match window {
                Some(w) => w,
                None => std::fs::read_to_string(out.join("config.toml"))
                    .ok()
                    .and_then(|t| ExperimentConfig::from_toml(&t).ok())
                    .map_or(50, |c| c.experiment.smoothing_window),
            };
            if window == 0 {
                return Err(HarnessError::Config("--window must be at least 1".into()));
            }
            let report = commands::plot_data(&out, window)?;
            for p in &report.series {
                println!("wrote {}", p.display());
            }
            if let Some(p) = &report.heatmaps {
                println!("wrote {}", p.display());
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

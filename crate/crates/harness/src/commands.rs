//! The work behind each `aoisched` subcommand. `main.rs` only parses flags.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use aoi_core::baselines::{evaluate_policy, ActorPolicy, BaselineKind, Policy, Summary};
use aoi_core::env::{EnvState, JointAction, StepResult};
use aoi_core::nets::ActorCritic;
use aoi_core::ppo::{train as train_ppo, AttentionSnapshot, EpisodeMetrics, TrainObserver, TrainOptions};

use crate::attention::{export_attention, snapshot_rows, ExportReport};
use crate::checks::{oracle_dominance, run_checks, CheckOptions, CheckReport};
use crate::config::{ExperimentConfig, PolicyName};
use crate::plots::{emit_plots, PlotReport};
use crate::records::{ensure_parent, write_attention, write_summary, AttentionRow, CsvSink, MetricsRow, TraceRow};
use crate::run_dir::RunDir;
use crate::{HarnessError, Result};

/// Streams training output into a run directory.
struct FileObserver {
    run: RunDir,
    metrics: CsvSink<MetricsRow>,
    attention: Vec<AttentionRow>,
}

impl FileObserver {
    fn save_checkpoint(&self, model: &ActorCritic, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
        let mut w = BufWriter::new(file);
        model.save(&mut w).map_err(|source| HarnessError::Checkpoint {
            path: path.to_path_buf(),
            source,
        })?;
        std::io::Write::flush(&mut w).map_err(|e| HarnessError::io(path, e))
    }
}

fn observer_err(e: HarnessError) -> aoi_core::Error {
    aoi_core::Error::Observer(e.to_string())
}

impl TrainObserver for FileObserver {
    fn episode(&mut self, metrics: &EpisodeMetrics) -> aoi_core::Result<()> {
        self.metrics.push(&MetricsRow::from(metrics)).map_err(observer_err)
    }

    fn attention(&mut self, snapshot: &AttentionSnapshot) -> aoi_core::Result<()> {
        self.attention.extend(snapshot_rows(snapshot));
        write_attention(&self.run.snapshots(), &self.attention).map_err(observer_err)
    }

    fn checkpoint(&mut self, model: &ActorCritic, best: bool) -> aoi_core::Result<()> {
        self.save_checkpoint(model, &self.run.latest_checkpoint())
            .map_err(observer_err)?;
        if best {
            self.save_checkpoint(model, &self.run.best_checkpoint())
                .map_err(observer_err)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub run: RunDir,
    pub episodes: usize,
    pub updates: usize,
    pub best_mean_reward: f64,
}

/// Trains the configured network policy and writes the run directory:
/// config copy, metrics, checkpoints and (Transformer only) attention
/// snapshots.
pub fn train(cfg: &ExperimentConfig) -> Result<TrainReport> {
    let kind = cfg.experiment.policy.net_kind().ok_or_else(|| {
        HarnessError::Config(format!(
            "experiment.policy: train needs transformer or mlp, got {}",
            cfg.experiment.policy.as_str()
        ))
    })?;
    let run = RunDir::new(&cfg.experiment.out);
    std::fs::create_dir_all(run.checkpoint_dir()).map_err(|e| HarnessError::io(&run.checkpoint_dir(), e))?;
    cfg.save(&run.config())?;
    // Stale snapshots from an earlier run in the same directory would be
    // mistaken for this run's.
    if run.snapshots().exists() {
        std::fs::remove_file(run.snapshots()).map_err(|e| HarnessError::io(&run.snapshots(), e))?;
    }
    if cfg.experiment.policy == PolicyName::Transformer {
        std::fs::create_dir_all(run.attention_dir()).map_err(|e| HarnessError::io(&run.attention_dir(), e))?;
    }
    let mut observer = FileObserver {
        metrics: CsvSink::create(&run.metrics())?,
        run: run.clone(),
        attention: Vec::new(),
    };
    let opts = TrainOptions {
        seed: cfg.experiment.seed,
        snapshot_fractions: cfg.experiment.snapshot_fractions.clone(),
    };
    let outcome = train_ppo(
        &cfg.env_config()?,
        &cfg.net_config(kind),
        &cfg.ppo_config(),
        &opts,
        &mut observer,
    )?;
    if !run.best_checkpoint().exists() {
        observer.save_checkpoint(&outcome.model, &run.best_checkpoint())?;
    }
    Ok(TrainReport {
        run,
        episodes: outcome.episodes,
        updates: outcome.updates,
        best_mean_reward: outcome.best_mean_reward,
    })
}

/// Reads a checkpoint into a model built from `cfg`'s network sizes.
pub fn load_model(cfg: &ExperimentConfig, path: &Path) -> Result<ActorCritic> {
    let kind = cfg
        .experiment
        .policy
        .net_kind()
        .ok_or_else(|| HarnessError::Config("experiment.policy: checkpoints need transformer or mlp".into()))?;
    let mut model = ActorCritic::new(cfg.net_config(kind), cfg.experiment.seed)?;
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    model.load(BufReader::new(file)).map_err(|source| HarnessError::Checkpoint {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(model)
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    /// Defaults to `checkpoints/best.ckpt` in the output directory.
    pub checkpoint: Option<PathBuf>,
    /// Sample from the policy instead of taking its argmax.
    pub stochastic: bool,
}

/// Evaluates the configured policy for `experiment.eval_episodes` episodes
/// and writes `summary.json` and `traces/eval_trace.csv`.
pub fn eval(cfg: &ExperimentConfig, opts: &EvalOptions) -> Result<Summary> {
    let run = RunDir::new(&cfg.experiment.out);
    let env = cfg.env_config()?;
    let mut policy: Box<dyn Policy> = match cfg.experiment.policy {
        PolicyName::Transformer | PolicyName::Mlp => {
            let path = opts.checkpoint.clone().unwrap_or_else(|| run.best_checkpoint());
            Box::new(ActorPolicy::new(load_model(cfg, &path)?, !opts.stochastic))
        }
        PolicyName::Random => Box::new(BaselineKind::Random),
        PolicyName::RoundRobin => Box::new(BaselineKind::RoundRobin),
        PolicyName::Greedy => Box::new(BaselineKind::MaxAoiGreedy),
        PolicyName::Oracle => Box::new(BaselineKind::Oracle),
    };
    let trace_path = run.trace();
    ensure_parent(&trace_path)?;
    let mut sink = CsvSink::<TraceRow>::create(&trace_path)?;
    let mut write_trace = |episode: usize, state: &EnvState, action: &JointAction, step: &StepResult| {
        for row in trace_rows(episode, state, action, step, &env.radio.power_levels_w) {
            sink.push(&row).map_err(observer_err)?;
        }
        Ok(())
    };
    let summary = evaluate_policy(
        policy.as_mut(),
        &env,
        cfg.experiment.eval_episodes,
        &[cfg.experiment.seed],
        Some(&mut write_trace),
    )?;
    write_summary(&run.summary(), &summary)?;
    Ok(summary)
}

/// One row per user for the slot `state -> step.next_state`. AoI, reset
/// value and residual are the post-step values that `reward` is computed
/// from.
pub fn trace_rows(
    episode: usize,
    state: &EnvState,
    action: &JointAction,
    step: &StepResult,
    levels: &[f64],
) -> Vec<TraceRow> {
    let next = &step.next_state;
    action
        .users()
        .iter()
        .enumerate()
        .map(|(u, a)| TraceRow {
            episode,
            t: state.t,
            user: u,
            aoi: next.aoi[u],
            residual_bits: next.residual_bits[u],
            aoi_reset: next.aoi_reset[u],
            subcarrier: a.subcarrier.map_or(-1, |n| n as i64),
            power_w: if a.subcarrier.is_some() { levels[a.power_level] } else { 0.0 },
            rate_bits: step.rates[u],
            done_flag: step.completed[u] as u8,
            violation_flag: step.violations[u] as u8,
            reward: step.reward,
        })
        .collect()
}

/// Runs the self-checks. Failing checks are reported, not raised; callers
/// decide the exit status.
pub fn check(cfg: &ExperimentConfig, opts: &CheckOptions) -> Result<Vec<CheckReport>> {
    run_checks(cfg, opts)
}

#[derive(Debug, Clone, Copy)]
pub struct OracleCheckOptions {
    pub users: usize,
    pub subcarriers: usize,
    pub levels: usize,
    pub states: usize,
    pub seed: u64,
}

pub fn oracle_check(opts: &OracleCheckOptions) -> Result<CheckReport> {
    oracle_dominance(opts.users, opts.subcarriers, opts.levels, opts.states, opts.seed)
}

pub fn export(run: &Path, episodes: Option<&[usize]>) -> Result<ExportReport> {
    export_attention(&RunDir::new(run), episodes)
}

pub fn plot_data(root: &Path, window: usize) -> Result<PlotReport> {
    emit_plots(root, window)
}

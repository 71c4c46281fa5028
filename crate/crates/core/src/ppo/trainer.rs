use std::collections::BTreeSet;

use aoi_autograd::{Adam, Tape, Tensor, TensorError};
use rand::seq::SliceRandom;
use rand::Rng as _;

use super::loss::{total_loss, value_targets, LossStats, Minibatch};
use super::{compute_gae, PpoConfig, RolloutBuffer};
use crate::env::{Env, EnvConfig};
use crate::nets::{sample_masked_action, stack, ActorCritic, NetConfig};
use crate::{rng_from_seed, Error, Result, Rng};

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    pub episode: usize,
    /// Per-slot reward averaged over the episode.
    pub mean_reward: f64,
    /// AoI averaged over slots and users.
    pub mean_aoi: f64,
    /// Fraction of user-slots whose AoI exceeded the threshold.
    pub violation_rate: f64,
    /// Mean joint policy entropy of the sampled distributions.
    pub entropy: f64,
    /// Losses of the update that consumed this episode's last step,
    /// averaged over its minibatches.
    pub loss: LossStats,
}

/// Attention of every actor layer, averaged over an episode's slots;
/// each tensor is `[heads, U, U]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionSnapshot {
    pub episode: usize,
    pub layers: Vec<Tensor>,
}

pub trait TrainObserver {
    fn episode(&mut self, metrics: &EpisodeMetrics) -> Result<()>;

    fn attention(&mut self, _snapshot: &AttentionSnapshot) -> Result<()> {
        Ok(())
    }

    /// Called after every update; `best` marks a new best mean reward over
    /// the episodes finished since the previous update.
    fn checkpoint(&mut self, _model: &ActorCritic, _best: bool) -> Result<()> {
        Ok(())
    }
}

/// Observer that keeps everything in memory.
#[derive(Debug, Default, Clone)]
pub struct Recorder {
    pub metrics: Vec<EpisodeMetrics>,
    pub snapshots: Vec<AttentionSnapshot>,
    pub best_checkpoints: usize,
}

impl TrainObserver for Recorder {
    fn episode(&mut self, metrics: &EpisodeMetrics) -> Result<()> {
        self.metrics.push(metrics.clone());
        Ok(())
    }

    fn attention(&mut self, snapshot: &AttentionSnapshot) -> Result<()> {
        self.snapshots.push(snapshot.clone());
        Ok(())
    }

    fn checkpoint(&mut self, _model: &ActorCritic, best: bool) -> Result<()> {
        self.best_checkpoints += best as usize;
        Ok(())
    }
}

pub const DEFAULT_SNAPSHOT_FRACTIONS: [f64; 6] = [0.0, 0.1, 0.25, 0.5, 0.7, 1.0];

/// Episode indices at the given fractions of the budget; `1.0` maps to the
/// final episode.
pub fn snapshot_episodes(budget: usize, fractions: &[f64]) -> BTreeSet<usize> {
    fractions
        .iter()
        .map(|f| ((f * budget as f64).floor() as usize).min(budget.saturating_sub(1)))
        .collect()
}

/// Episode statistics before the loss columns are known.
#[derive(Debug, Clone)]
pub struct FinishedEpisode {
    pub index: usize,
    pub mean_reward: f64,
    pub mean_aoi: f64,
    pub violation_rate: f64,
    pub entropy: f64,
    pub attention: Option<Vec<Tensor>>,
}

#[derive(Debug, Clone, Default)]
struct EpisodeAccumulator {
    steps: usize,
    reward: f64,
    aoi: f64,
    violations: usize,
    entropy: f64,
    attention: Option<Vec<Tensor>>,
}

/// Environment plus sampling state that persists across buffer fills, so
/// episodes may straddle updates.
#[derive(Debug, Clone)]
pub struct Collector {
    pub env: Env,
    rng: Rng,
    current: EpisodeAccumulator,
    finished: usize,
    snapshots: BTreeSet<usize>,
}

impl Collector {
    pub fn new(env: Env, sample_seed: u64, snapshots: BTreeSet<usize>) -> Self {
        let mut c = Collector {
            env,
            rng: rng_from_seed(sample_seed),
            current: EpisodeAccumulator::default(),
            finished: 0,
            snapshots,
        };
        c.start_episode();
        c
    }

    fn start_episode(&mut self) {
        self.current = EpisodeAccumulator::default();
        if self.snapshots.contains(&self.finished) {
            self.current.attention = Some(Vec::new());
        }
    }

    /// Episodes completed so far.
    pub fn finished(&self) -> usize {
        self.finished
    }
}

/// Fills `buffer` with on-policy steps until it is full or `max_episodes`
/// episodes have finished in total. Returns the episodes finished meanwhile.
pub fn collect_rollouts(
    collector: &mut Collector,
    model: &ActorCritic,
    buffer: &mut RolloutBuffer,
    max_episodes: usize,
) -> Result<Vec<FinishedEpisode>> {
    if !buffer.is_empty() {
        return Err(Error::Contract("collect_rollouts needs an empty buffer".into()));
    }
    let users = collector.env.config().users();
    let mut done = Vec::new();
    let mut last_terminal = true;
    while !buffer.is_full() && collector.finished < max_episodes {
        let features = collector.env.features();
        let out = model.actor_forward(&features)?;
        let value = model.critic_forward(&features)?;
        let sample = sample_masked_action(&out, &mut collector.rng);
        let step = collector.env.step(&sample.action)?;

        let acc = &mut collector.current;
        acc.steps += 1;
        acc.reward += step.reward;
        acc.aoi += step.next_state.aoi.iter().map(|&a| a as f64).sum::<f64>();
        acc.violations += step.violations.iter().filter(|&&v| v).count();
        acc.entropy += sample.entropies.iter().sum::<f64>();
        if let Some(sum) = acc.attention.as_mut() {
            if sum.is_empty() {
                *sum = out.attention.clone();
            } else {
                for (s, a) in sum.iter_mut().zip(&out.attention) {
                    s.data_mut().iter_mut().zip(a.data()).for_each(|(s, v)| *s += v);
                }
            }
        }
        buffer.push(features, sample.action, sample.log_prob, step.reward, value, step.terminal);
        last_terminal = step.terminal;

        if step.terminal {
            let acc = std::mem::take(&mut collector.current);
            let n = acc.steps as f64;
            let attention = acc.attention.filter(|l| !l.is_empty()).map(|mut layers| {
                for t in &mut layers {
                    t.data_mut().iter_mut().for_each(|v| *v /= n);
                }
                layers
            });
            done.push(FinishedEpisode {
                index: collector.finished,
                mean_reward: acc.reward / n,
                mean_aoi: acc.aoi / (n * users as f64),
                violation_rate: acc.violations as f64 / (n * users as f64),
                entropy: acc.entropy / n,
                attention,
            });
            collector.finished += 1;
            collector.env.reset();
            collector.start_episode();
        }
    }
    buffer.bootstrap_value = if last_terminal {
        0.0
    } else {
        model.critic_forward(&collector.env.features())?
    };
    Ok(done)
}

/// `epochs` shuffled passes of minibatch Adam steps over the buffer, which is
/// cleared afterwards. Returns the mean loss statistics.
pub fn update(
    model: &mut ActorCritic,
    adam: &Adam,
    buffer: &mut RolloutBuffer,
    cfg: &PpoConfig,
    rng: &mut Rng,
) -> Result<LossStats> {
    if buffer.is_empty() {
        return Ok(LossStats::default());
    }
    let gae = compute_gae(
        &buffer.rewards,
        &buffer.values,
        &buffer.terminals,
        buffer.bootstrap_value,
        cfg.gamma,
        cfg.gae_lambda,
    );
    let targets = value_targets(cfg.value_target, &gae.returns, &buffer.rewards);
    let users = buffer.features[0].rows();
    let mut order: Vec<usize> = (0..buffer.len()).collect();
    let mut sum = LossStats::default();
    let mut steps = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let feats: Vec<&Tensor> = chunk.iter().map(|&i| &buffer.features[i]).collect();
            let batch = Minibatch {
                features: stack(&feats)?,
                users,
                actions: chunk.iter().map(|&i| &buffer.actions[i]).collect(),
                old_log_probs: chunk.iter().map(|&i| buffer.log_probs[i]).collect(),
                advantages: chunk.iter().map(|&i| gae.advantages[i]).collect(),
                value_targets: chunk.iter().map(|&i| targets[i]).collect(),
            };
            let mut tape = Tape::new();
            let vars = total_loss(&mut tape, model, &model.store, &batch, cfg)?;
            let stats = vars.stats(&tape);
            if !stats.total.is_finite() {
                return Err(Error::Tensor(TensorError::NonFinite { op: "ppo loss" }));
            }
            model.store.zero_grad();
            tape.backward(vars.loss, &mut model.store)?;
            if let Some(limit) = cfg.max_grad_norm {
                model.store.clip_grad_norm(limit);
            }
            adam.step(&mut model.store);
            sum.total += stats.total;
            sum.clip += stats.clip;
            sum.value_loss += stats.value_loss;
            sum.entropy += stats.entropy;
            steps += 1;
        }
    }
    buffer.clear();
    let n = steps as f64;
    Ok(LossStats {
        total: sum.total / n,
        clip: sum.clip / n,
        value_loss: sum.value_loss / n,
        entropy: sum.entropy / n,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub seed: u64,
    pub snapshot_fractions: Vec<f64>,
}

impl TrainOptions {
    pub fn new(seed: u64) -> Self {
        TrainOptions {
            seed,
            snapshot_fractions: DEFAULT_SNAPSHOT_FRACTIONS.to_vec(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ActorCritic,
    pub episodes: usize,
    pub updates: usize,
    pub best_mean_reward: f64,
}

/// Independent streams derived from one seed.
#[derive(Debug, Clone, Copy)]
pub struct SeedPlan {
    pub model: u64,
    pub env: u64,
    pub sampling: u64,
    pub shuffle: u64,
}

impl SeedPlan {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        SeedPlan {
            model: rng.random(),
            env: rng.random(),
            sampling: rng.random(),
            shuffle: rng.random(),
        }
    }
}

/// Collect, estimate advantages and update until `ppo.episodes` episodes
/// have finished.
pub fn train(
    env_cfg: &EnvConfig,
    net_cfg: &NetConfig,
    ppo: &PpoConfig,
    opts: &TrainOptions,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    env_cfg.validate()?;
    net_cfg.validate()?;
    ppo.validate()?;
    let seeds = SeedPlan::from_seed(opts.seed);
    let mut model = ActorCritic::new(net_cfg.clone(), seeds.model)?;
    let adam = Adam::new(ppo.learning_rate);
    let snapshots = snapshot_episodes(ppo.episodes, &opts.snapshot_fractions);
    let mut collector = Collector::new(Env::new(env_cfg.clone(), seeds.env), seeds.sampling, snapshots);
    let mut shuffle = rng_from_seed(seeds.shuffle);
    let mut buffer = RolloutBuffer::new(ppo.buffer_capacity);
    let mut best = f64::NEG_INFINITY;
    let mut updates = 0;

    while collector.finished() < ppo.episodes {
        let finished = collect_rollouts(&mut collector, &model, &mut buffer, ppo.episodes)?;
        let loss = update(&mut model, &adam, &mut buffer, ppo, &mut shuffle)
            .map_err(|e| diverged(e, opts.seed, collector.finished(), &model))?;
        updates += 1;

        for ep in &finished {
            if let Some(layers) = &ep.attention {
                observer.attention(&AttentionSnapshot {
                    episode: ep.index,
                    layers: layers.clone(),
                })?;
            }
            observer.episode(&EpisodeMetrics {
                episode: ep.index,
                mean_reward: ep.mean_reward,
                mean_aoi: ep.mean_aoi,
                violation_rate: ep.violation_rate,
                entropy: ep.entropy,
                loss,
            })?;
        }
        let is_best = if finished.is_empty() {
            false
        } else {
            let mean = finished.iter().map(|e| e.mean_reward).sum::<f64>() / finished.len() as f64;
            let improved = mean > best;
            best = best.max(mean);
            improved
        };
        observer.checkpoint(&model, is_best)?;
    }
    Ok(TrainOutcome {
        model,
        episodes: collector.finished(),
        updates,
        best_mean_reward: best,
    })
}

fn diverged(err: Error, seed: u64, episode: usize, model: &ActorCritic) -> Error {
    match err {
        Error::Tensor(TensorError::NonFinite { op }) => {
            let norms: Vec<String> = model
                .store
                .value_norms()
                .into_iter()
                .map(|(name, n)| format!("{name}={n:.6e}"))
                .collect();
            Error::Diverged(format!(
                "non-finite value in {op} (seed {seed}, episode {episode}); parameter norms: {}",
                norms.join(", ")
            ))
        }
        other => other,
    }
}

//! Non-learning reference policies, the exhaustive one-slot oracle and
//! policy evaluation.

mod heuristics;
mod oracle;

use serde::{Deserialize, Serialize};

pub use heuristics::{max_aoi_greedy_action, random_policy_action, round_robin_action};
pub use oracle::{
    brute_force_best_action, enumerate_feasible, feasible_action_count, one_step_reward, BRUTE_FORCE_LIMIT,
};

use crate::env::{state_features, Env, EnvConfig, EnvState, JointAction, StepResult};
use crate::nets::{greedy_action, sample_masked_action, ActorCritic};
use crate::{rng_from_seed, Error, Result, Rng};

/// A scheduling policy. `rng` is a stream owned by the caller, separate from
/// the environment's fading stream.
pub trait Policy {
    fn name(&self) -> &str;

    fn act(&mut self, state: &EnvState, cfg: &EnvConfig, rng: &mut Rng) -> Result<JointAction>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    Random,
    RoundRobin,
    MaxAoiGreedy,
    /// Exhaustive one-slot search applied every slot.
    Oracle,
    AlwaysIdle,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Random => "random",
            BaselineKind::RoundRobin => "round-robin",
            BaselineKind::MaxAoiGreedy => "greedy",
            BaselineKind::Oracle => "oracle",
            BaselineKind::AlwaysIdle => "idle",
        }
    }
}

impl Policy for BaselineKind {
    fn name(&self) -> &str {
        BaselineKind::name(*self)
    }

    fn act(&mut self, state: &EnvState, cfg: &EnvConfig, rng: &mut Rng) -> Result<JointAction> {
        Ok(match self {
            BaselineKind::Random => random_policy_action(cfg, rng),
            BaselineKind::RoundRobin => round_robin_action(cfg, state.t),
            BaselineKind::MaxAoiGreedy => max_aoi_greedy_action(state, cfg),
            BaselineKind::Oracle => brute_force_best_action(state, cfg)?.0,
            BaselineKind::AlwaysIdle => JointAction::idle(cfg.users()),
        })
    }
}

/// A trained (or freshly initialised) actor.
#[derive(Debug, Clone)]
pub struct ActorPolicy {
    pub model: ActorCritic,
    /// Take the most likely action instead of sampling.
    pub greedy: bool,
    name: String,
}

impl ActorPolicy {
    pub fn new(model: ActorCritic, greedy: bool) -> Self {
        let name = model.cfg.kind.name().to_string();
        ActorPolicy { model, greedy, name }
    }
}

impl Policy for ActorPolicy {
    fn name(&self) -> &str {
        &self.name
    }

    fn act(&mut self, state: &EnvState, cfg: &EnvConfig, rng: &mut Rng) -> Result<JointAction> {
        let out = self.model.actor_forward(&state_features(state, cfg))?;
        Ok(if self.greedy {
            greedy_action(&out)
        } else {
            sample_masked_action(&out, rng).action
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSummary {
    pub user: usize,
    pub mean_aoi: f64,
    pub violation_rate: f64,
    /// Tasks delivered per episode.
    pub completions: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub policy: String,
    pub seeds: Vec<u64>,
    pub episodes: usize,
    /// Per-slot reward.
    pub mean_reward: f64,
    pub mean_aoi: f64,
    pub violation_rate: f64,
    pub per_user: Vec<UserSummary>,
}

/// Called once per slot during evaluation with the episode index, the state
/// the action was taken in, the action and the step outcome.
pub type TraceFn<'a> = dyn FnMut(usize, &EnvState, &JointAction, &StepResult) -> Result<()> + 'a;

/// Runs `episodes` episodes for every seed. Each seed drives its own
/// environment; the policy stream is derived from the same seed.
pub fn evaluate_policy(
    policy: &mut dyn Policy,
    cfg: &EnvConfig,
    episodes: usize,
    seeds: &[u64],
    mut trace: Option<&mut TraceFn<'_>>,
) -> Result<Summary> {
    cfg.validate()?;
    if episodes == 0 || seeds.is_empty() {
        return Err(Error::Config("evaluation needs at least one episode and one seed".into()));
    }
    let users = cfg.users();
    let mut slots = 0usize;
    let mut reward = 0.0;
    let mut aoi = vec![0u64; users];
    let mut violations = vec![0usize; users];
    let mut completions = vec![0usize; users];
    let mut episode_index = 0;
    for &seed in seeds {
        let mut env = Env::new(cfg.clone(), seed);
        let mut rng = rng_from_seed(seed ^ POLICY_STREAM);
        for ep in 0..episodes {
            if ep > 0 {
                env.reset();
            }
            loop {
                let state = env.state().clone();
                let action = policy.act(&state, cfg, &mut rng)?;
                let step = env.step(&action)?;
                if let Some(f) = trace.as_mut() {
                    f(episode_index, &state, &action, &step)?;
                }
                slots += 1;
                reward += step.reward;
                for u in 0..users {
                    aoi[u] += step.next_state.aoi[u] as u64;
                    violations[u] += step.violations[u] as usize;
                    completions[u] += step.completed[u] as usize;
                }
                if step.terminal {
                    break;
                }
            }
            episode_index += 1;
        }
    }
    let s = slots as f64;
    let per_user: Vec<UserSummary> = (0..users)
        .map(|u| UserSummary {
            user: u,
            mean_aoi: aoi[u] as f64 / s,
            violation_rate: violations[u] as f64 / s,
            completions: completions[u] as f64 / episode_index as f64,
        })
        .collect();
    Ok(Summary {
        policy: policy.name().to_string(),
        seeds: seeds.to_vec(),
        episodes: episode_index,
        mean_reward: reward / s,
        mean_aoi: aoi.iter().sum::<u64>() as f64 / (s * users as f64),
        violation_rate: violations.iter().sum::<usize>() as f64 / (s * users as f64),
        per_user,
    })
}

/// Separates the policy's random stream from the environment's.
const POLICY_STREAM: u64 = 0x0005_eed0_fa11_c1e5;

//! The scheduling MDP.
//!
//! Every user always holds one task. Each slot the transmitted bits are
//! subtracted from the task residual; when it reaches zero the task is
//! delivered, the AoI is partially reset to `a - a_reset + 1`, and a fresh task
//! of the same size is generated immediately (surplus bits are discarded).

use aoi_autograd::Tensor;

use crate::channel::{sample_gains, slot_rates, GainMatrix, RadioConfig, SlotAssignment};
use crate::{rng_from_seed, Error, Result, Rng};

pub const MEGABIT: f64 = 1e6;

/// Heterogeneous per-user requirements.
#[derive(Debug, Clone, PartialEq)]
pub struct UserProfile {
    /// AoI above which the user counts as violating, in slots.
    pub aoi_threshold: u32,
    pub penalty_weight: f64,
    pub task_bits: f64,
}

/// Arithmetic-sequence profiles: user `u` (0-based) gets threshold `15 + u`
/// slots, task `1 + 0.25 u` Mbit and weight `40 - 2 u`.
pub fn build_profiles(users: usize) -> Result<Vec<UserProfile>> {
    if users == 0 {
        return Err(Error::Config("env.users must be at least 1".into()));
    }
    let profiles: Vec<UserProfile> = (0..users)
        .map(|u| UserProfile {
            aoi_threshold: 15 + u as u32,
            penalty_weight: 40.0 - 2.0 * u as f64,
            task_bits: (1.0 + 0.25 * u as f64) * MEGABIT,
        })
        .collect();
    if let Some(u) = profiles.iter().position(|p| p.penalty_weight <= 0.0) {
        return Err(Error::Config(format!(
            "env.users = {users}: default penalty weight of user {} would be {} (must be > 0); \
             provide explicit weights",
            u + 1,
            profiles[u].penalty_weight
        )));
    }
    Ok(profiles)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub radio: RadioConfig,
    pub profiles: Vec<UserProfile>,
    /// Normaliser of the AoI term; AoI itself is never clamped to it.
    pub a_max: f64,
    /// Weight of the threshold-violation term.
    pub lambda: f64,
    /// Slots per episode.
    pub horizon: usize,
    /// Per-episode completion cap, used only when reporting completions.
    pub max_tasks: u32,
}

impl EnvConfig {
    /// Default environment for `users` users: arithmetic profiles, `a_max = 50`,
    /// `lambda = 0.1`, 200-slot episodes and the default radio.
    pub fn with_users(users: usize) -> Result<Self> {
        Ok(EnvConfig {
            radio: RadioConfig::default(),
            profiles: build_profiles(users)?,
            a_max: 50.0,
            lambda: 0.1,
            horizon: 200,
            max_tasks: 3,
        })
    }

    pub fn users(&self) -> usize {
        self.profiles.len()
    }

    pub fn feature_dim(&self) -> usize {
        3 + self.radio.subcarriers
    }

    pub fn validate(&self) -> Result<()> {
        self.radio.validate()?;
        if self.profiles.is_empty() {
            return Err(Error::Config("env.users must be at least 1".into()));
        }
        for (u, p) in self.profiles.iter().enumerate() {
            if p.aoi_threshold == 0 || !(p.penalty_weight > 0.0) || !(p.task_bits > 0.0) {
                return Err(Error::Config(format!(
                    "env profile of user {}: threshold, weight and task size must be > 0 ({p:?})",
                    u + 1
                )));
            }
        }
        let max_tau = self.profiles.iter().map(|p| p.aoi_threshold).max().unwrap_or(0);
        if !(self.a_max >= max_tau as f64) {
            return Err(Error::Config(format!(
                "env.a_max = {} must be >= the largest threshold {max_tau}",
                self.a_max
            )));
        }
        if self.horizon == 0 {
            return Err(Error::Config("env.horizon must be at least 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("env.lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub aoi: Vec<u32>,
    pub aoi_reset: Vec<u32>,
    /// Bits of the head-of-line task still to send.
    pub residual_bits: Vec<f64>,
    pub gains: GainMatrix,
    pub t: usize,
}

/// One user's decision: a subcarrier (or silence) and a power-level index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct UserAction {
    pub subcarrier: Option<usize>,
    /// Index into `RadioConfig::power_levels_w`; ignored while idle.
    pub power_level: usize,
}

impl UserAction {
    pub const IDLE: UserAction = UserAction {
        subcarrier: None,
        power_level: 0,
    };

    pub fn on(subcarrier: usize, power_level: usize) -> Self {
        UserAction {
            subcarrier: Some(subcarrier),
            power_level,
        }
    }

    /// Index in the channel-head output: 0 is idle, `n + 1` is subcarrier `n`.
    pub fn channel_index(&self) -> usize {
        self.subcarrier.map_or(0, |n| n + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct JointAction(pub Vec<UserAction>);

impl JointAction {
    pub fn idle(users: usize) -> Self {
        JointAction(vec![UserAction::IDLE; users])
    }

    pub fn users(&self) -> &[UserAction] {
        &self.0
    }

    pub fn to_assignment(&self, radio: &RadioConfig) -> Result<SlotAssignment> {
        let mut a = SlotAssignment::idle(self.0.len());
        for (u, act) in self.0.iter().enumerate() {
            if let Some(n) = act.subcarrier {
                let p = radio.power_levels_w.get(act.power_level).ok_or_else(|| {
                    Error::Constraint(format!(
                        "user {u} power level {} out of {} levels",
                        act.power_level,
                        radio.levels()
                    ))
                })?;
                a.subcarrier[u] = Some(n);
                a.power_w[u] = *p;
            }
        }
        Ok(a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: EnvState,
    pub reward: f64,
    pub rates: Vec<f64>,
    pub completed: Vec<bool>,
    pub violations: Vec<bool>,
    pub terminal: bool,
}

/// Initial state: zero AoI and reset values, every user holding a fresh task.
pub fn reset_with(cfg: &EnvConfig, rng: &mut Rng) -> EnvState {
    let u = cfg.users();
    EnvState {
        aoi: vec![0; u],
        aoi_reset: vec![0; u],
        residual_bits: cfg.profiles.iter().map(|p| p.task_bits).collect(),
        gains: sample_gains(rng, u, cfg.radio.subcarriers, cfg.radio.fading_mean),
        t: 0,
    }
}

pub fn env_reset(cfg: &EnvConfig, seed: u64) -> EnvState {
    reset_with(cfg, &mut rng_from_seed(seed))
}

/// Arbitrary state satisfying the state invariants (`a_reset <= a`,
/// residual in `(0, L]`), for property checks on situations a short rollout
/// would rarely reach.
pub fn sample_state(cfg: &EnvConfig, max_aoi: u32, rng: &mut Rng) -> EnvState {
    use rand::Rng as _;
    let users = cfg.users();
    let aoi: Vec<u32> = (0..users).map(|_| rng.random_range(0..=max_aoi)).collect();
    EnvState {
        aoi_reset: aoi.iter().map(|&a| rng.random_range(0..=a)).collect(),
        residual_bits: cfg
            .profiles
            .iter()
            .map(|p| p.task_bits * (1.0 - rng.random::<f64>()))
            .collect(),
        gains: sample_gains(rng, users, cfg.radio.subcarriers, cfg.radio.fading_mean),
        aoi,
        t: rng.random_range(0..cfg.horizon.max(1)),
    }
}

/// Channel options open to the next user given the subcarriers chosen by the
/// users before it. Entry 0 (idle) is always allowed; subcarrier `n` (entry
/// `n + 1`) closes once two earlier users occupy it.
pub fn feasibility_mask(earlier: &[Option<usize>], subcarriers: usize) -> Vec<bool> {
    let mut load = vec![0usize; subcarriers];
    for n in earlier.iter().flatten() {
        if let Some(l) = load.get_mut(*n) {
            *l += 1;
        }
    }
    std::iter::once(true).chain(load.iter().map(|&l| l < 2)).collect()
}

/// Partial-reset AoI recursion. Returns `(a', a_reset')`.
pub fn aoi_update(aoi: u32, aoi_reset: u32, task_done: bool) -> (u32, u32) {
    debug_assert!(aoi >= aoi_reset);
    if task_done {
        let next = aoi - aoi_reset + 1;
        (next, next)
    } else {
        (aoi + 1, aoi_reset)
    }
}

/// `-(sum(a) / (U a_max) + lambda * sum(w_u [a_u > tau_u]))`.
pub fn instantaneous_reward(aoi: &[u32], cfg: &EnvConfig) -> f64 {
    let total: u64 = aoi.iter().map(|&a| a as u64).sum();
    let penalty: f64 = aoi
        .iter()
        .zip(&cfg.profiles)
        .filter(|(&a, p)| a > p.aoi_threshold)
        .map(|(_, p)| p.penalty_weight)
        .sum();
    -(total as f64 / (cfg.users() as f64 * cfg.a_max) + cfg.lambda * penalty)
}

/// Advances one slot. The action must satisfy C1–C3.
pub fn step(state: &EnvState, action: &JointAction, cfg: &EnvConfig, rng: &mut Rng) -> Result<StepResult> {
    let users = cfg.users();
    if action.0.len() != users {
        return Err(Error::Contract(format!(
            "action covers {} users, environment has {users}",
            action.0.len()
        )));
    }
    let assignment = action.to_assignment(&cfg.radio)?;
    let rates = slot_rates(&assignment, &state.gains, &cfg.radio)?;

    let mut next = state.clone();
    let mut completed = vec![false; users];
    for u in 0..users {
        next.residual_bits[u] -= rates[u];
        let done = next.residual_bits[u] <= 0.0;
        let (a, r) = aoi_update(state.aoi[u], state.aoi_reset[u], done);
        next.aoi[u] = a;
        next.aoi_reset[u] = r;
        if done {
            next.residual_bits[u] = cfg.profiles[u].task_bits;
        }
        completed[u] = done;
    }
    let reward = instantaneous_reward(&next.aoi, cfg);
    let violations = next
        .aoi
        .iter()
        .zip(&cfg.profiles)
        .map(|(&a, p)| a > p.aoi_threshold)
        .collect();
    next.gains = sample_gains(rng, users, cfg.radio.subcarriers, cfg.radio.fading_mean);
    next.t += 1;
    let terminal = next.t >= cfg.horizon;
    Ok(StepResult {
        next_state: next,
        reward,
        rates,
        completed,
        violations,
        terminal,
    })
}

/// Per-user rows `[a/a_max, residual/L, a_reset/a_max, g_1 .. g_N]`.
pub fn state_features(state: &EnvState, cfg: &EnvConfig) -> Tensor {
    let (u, n) = (cfg.users(), cfg.radio.subcarriers);
    let mut data = Vec::with_capacity(u * (3 + n));
    for i in 0..u {
        data.push(state.aoi[i] as f64 / cfg.a_max);
        data.push(state.residual_bits[i] / cfg.profiles[i].task_bits);
        data.push(state.aoi_reset[i] as f64 / cfg.a_max);
        data.extend_from_slice(state.gains.user_row(i));
    }
    Tensor::new(vec![u, 3 + n], data).expect("feature layout")
}

/// Environment instance owning its state and fading generator.
#[derive(Debug, Clone)]
pub struct Env {
    cfg: EnvConfig,
    state: EnvState,
    rng: Rng,
    completions: Vec<u32>,
}

impl Env {
    pub fn new(cfg: EnvConfig, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let state = reset_with(&cfg, &mut rng);
        let completions = vec![0; cfg.users()];
        Env {
            cfg,
            state,
            rng,
            completions,
        }
    }

    /// Starts a new episode, continuing the same fading stream.
    pub fn reset(&mut self) -> &EnvState {
        self.state = reset_with(&self.cfg, &mut self.rng);
        self.completions.iter_mut().for_each(|c| *c = 0);
        &self.state
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn rng_mut(&mut self) -> &mut Rng {
        &mut self.rng
    }

    pub fn features(&self) -> Tensor {
        state_features(&self.state, &self.cfg)
    }

    /// Completed tasks per user in the current episode.
    pub fn completions(&self) -> &[u32] {
        &self.completions
    }

    pub fn step(&mut self, action: &JointAction) -> Result<StepResult> {
        let result = step(&self.state, action, &self.cfg, &mut self.rng)?;
        for (c, &done) in self.completions.iter_mut().zip(&result.completed) {
            *c += done as u32;
        }
        self.state = result.next_state.clone();
        Ok(result)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_user_cfg() -> EnvConfig {
        EnvConfig::with_users(2).unwrap()
    }

    #[test]
    fn profile_sequences() {
        let p = build_profiles(20).unwrap();
        assert_eq!((p[0].aoi_threshold, p[0].task_bits, p[0].penalty_weight), (15, 1e6, 40.0));
        assert_eq!((p[1].aoi_threshold, p[1].task_bits, p[1].penalty_weight), (16, 1.25e6, 38.0));
        assert_eq!((p[19].aoi_threshold, p[19].task_bits, p[19].penalty_weight), (34, 5.75e6, 2.0));
        assert!(matches!(build_profiles(21), Err(Error::Config(_))));
        assert!(build_profiles(0).is_err());
    }

    #[test]
    fn reset_state() {
        let cfg = EnvConfig::with_users(4).unwrap();
        let s = env_reset(&cfg, 11);
        assert!(s.aoi.iter().all(|&a| a == 0));
        assert!(s.aoi_reset.iter().all(|&a| a == 0));
        for (r, p) in s.residual_bits.iter().zip(&cfg.profiles) {
            assert_eq!(*r, p.task_bits);
        }
        assert_eq!(env_reset(&cfg, 11).gains, s.gains);
        assert_eq!(s.t, 0);
    }

    #[test]
    fn masks_follow_subcarrier_capacity() {
        assert_eq!(feasibility_mask(&[], 3), vec![true; 4]);
        let full = feasibility_mask(&[Some(2), Some(2)], 3);
        assert_eq!(full, vec![true, true, true, false]);
        assert_eq!(feasibility_mask(&[Some(2)], 3), vec![true; 4]);
        assert_eq!(feasibility_mask(&[None, None, None], 1), vec![true, true]);
    }

    #[test]
    fn aoi_partial_reset_examples() {
        assert_eq!(aoi_update(7, 3, true).0, 5);
        assert_eq!(aoi_update(7, 3, false), (8, 3));
        assert_eq!(aoi_update(5, 5, true), (1, 1));
    }

    #[test]
    fn reward_examples() {
        let mut cfg = two_user_cfg();
        assert_eq!(instantaneous_reward(&[0, 0], &cfg), 0.0);
        cfg.a_max = 50.0;
        cfg.lambda = 0.1;
        let r = instantaneous_reward(&[10, 20], &cfg);
        assert!((r + 4.1).abs() < 1e-12, "{r}");
        // AoI equal to the threshold is not a violation
        let r = instantaneous_reward(&[15, 16], &cfg);
        assert_eq!(r, -(31.0 / 100.0));
    }

    #[test]
    fn idle_step_ages_everyone() {
        let cfg = two_user_cfg();
        let mut env = Env::new(cfg.clone(), 3);
        let before = env.state().clone();
        let res = env.step(&JointAction::idle(2)).unwrap();
        assert_eq!(res.next_state.aoi, vec![1, 1]);
        assert_eq!(res.next_state.residual_bits, before.residual_bits);
        assert_eq!(res.reward, instantaneous_reward(&res.next_state.aoi, &cfg));
        assert_ne!(res.next_state.gains, before.gains);
    }

    #[test]
    fn completion_applies_partial_reset() {
        let cfg = EnvConfig::with_users(1).unwrap();
        let state = EnvState {
            aoi: vec![7],
            aoi_reset: vec![3],
            residual_bits: vec![1e5],
            gains: GainMatrix::new(1, 8, vec![1.0; 8]).unwrap(),
            t: 4,
        };
        let mut rng = rng_from_seed(0);
        let res = step(&state, &JointAction(vec![UserAction::on(0, 3)]), &cfg, &mut rng).unwrap();
        assert!(res.completed[0]);
        assert_eq!(res.next_state.aoi, vec![5]);
        assert_eq!(res.next_state.aoi_reset, vec![5]);
        assert_eq!(res.next_state.residual_bits, vec![1e6]);
        assert_eq!(res.reward, instantaneous_reward(&[5], &cfg));
    }

    #[test]
    fn infeasible_actions_are_rejected() {
        let cfg = EnvConfig::with_users(3).unwrap();
        let s = env_reset(&cfg, 0);
        let crowded = JointAction(vec![UserAction::on(1, 0); 3]);
        assert!(matches!(step(&s, &crowded, &cfg, &mut rng_from_seed(0)), Err(Error::Constraint(_))));
        let bad_level = JointAction(vec![UserAction::on(1, 9), UserAction::IDLE, UserAction::IDLE]);
        assert!(step(&s, &bad_level, &cfg, &mut rng_from_seed(0)).is_err());
    }

    #[test]
    fn features_layout() {
        let cfg = EnvConfig::with_users(20).unwrap();
        let s = env_reset(&cfg, 1);
        let f = state_features(&s, &cfg);
        assert_eq!(f.shape(), &[20, 11]);
        assert_eq!(&f.row(0)[..3], &[0.0, 1.0, 0.0]);
        assert_eq!(&f.row(4)[3..], s.gains.user_row(4));

        let mut s2 = s.clone();
        s2.aoi[0] = 50;
        assert_eq!(state_features(&s2, &cfg).row(0)[0], 1.0);
    }

    #[test]
    fn episode_terminates_at_horizon() {
        let mut cfg = two_user_cfg();
        cfg.horizon = 3;
        let mut env = Env::new(cfg, 0);
        let flags: Vec<bool> = (0..3).map(|_| env.step(&JointAction::idle(2)).unwrap().terminal).collect();
        assert_eq!(flags, vec![false, false, true]);
    }

    #[test]
    fn config_validation() {
        let mut cfg = two_user_cfg();
        cfg.validate().unwrap();
        cfg.a_max = 10.0;
        assert!(cfg.validate().is_err());
        let mut cfg = two_user_cfg();
        cfg.horizon = 0;
        assert!(cfg.validate().is_err());
    }
}

//! Self-checks bundled by the `check` and `oracle-check` commands. Each check
//! compares the implementation against a direct recomputation and reports
//! the measured discrepancy next to its tolerance.

use std::fmt;

use aoi_autograd::{finite_diff_check, ParamStore, Tape, Tensor};
use aoi_core::baselines::{
    brute_force_best_action, max_aoi_greedy_action, one_step_reward, random_policy_action, round_robin_action,
};
use aoi_core::channel::{slot_rates, GainMatrix, RadioConfig, SlotAssignment};
use aoi_core::env::{aoi_update, sample_state, state_features, step, EnvConfig, EnvState, JointAction, UserAction};
use aoi_core::nets::{greedy_action, sample_masked_action, stack, ActorCritic, NetConfig, NetKind};
use aoi_core::ppo::{compute_gae, total_loss, Minibatch, PpoConfig};
use aoi_core::{rng_from_seed, Rng};
use rand::Rng as _;

use crate::config::ExperimentConfig;
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckReport {
    /// Passes when `measured <= tolerance`.
    fn at_most(name: &str, measured: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        CheckReport {
            name: name.to_string(),
            passed: measured <= tolerance,
            measured,
            tolerance,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<22} measured={:.3e} tolerance={:.3e}  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.tolerance,
            self.detail
        )
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CheckOptions {
    pub seed: u64,
    /// Actions sampled per policy in the feasibility check.
    pub samples: usize,
    /// Frozen states in the oracle-dominance check.
    pub oracle_states: usize,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            seed: 0,
            samples: 100_000,
            oracle_states: 1_000,
        }
    }
}

/// Runs every check against `cfg`'s environment and model sizes.
pub fn run_checks(cfg: &ExperimentConfig, opts: &CheckOptions) -> Result<Vec<CheckReport>> {
    let env = cfg.env_config()?;
    let mut reports = vec![aoi_example()?, rate_oracle(opts.seed, 10_000)?];
    reports.extend(gradient_checks(opts.seed)?);
    reports.push(gae_oracle(opts.seed, 100));
    for kind in [NetKind::Transformer, NetKind::Mlp] {
        let model = ActorCritic::new(cfg.net_config(kind), opts.seed)?;
        reports.push(feasibility(&env, Sampler::Net(&model), opts.samples, opts.seed)?);
    }
    for policy in [Sampler::Random, Sampler::RoundRobin, Sampler::Greedy] {
        reports.push(feasibility(&env, policy, opts.samples, opts.seed)?);
    }
    reports.push(oracle_dominance(3, 2, 2, opts.oracle_states, opts.seed)?);
    reports.push(attention_rows(&env, &cfg.net_config(NetKind::Transformer), opts.seed)?);
    Ok(reports)
}

/// Completion at AoI 7 of a task generated at AoI 3 must leave AoI 5, both
/// through the update rule and through a full environment step.
pub fn aoi_example() -> Result<CheckReport> {
    let (a, reset) = aoi_update(7, 3, true);
    let mut cfg = EnvConfig::with_users(1)?;
    cfg.radio = RadioConfig::uniform(1, 1e6, 0.1, 1);
    let mut rng = rng_from_seed(0);
    let state = EnvState {
        aoi: vec![7],
        aoi_reset: vec![3],
        residual_bits: vec![1.0],
        gains: GainMatrix::new(1, 1, vec![1.0])?,
        t: 0,
    };
    let next = step(&state, &JointAction(vec![UserAction::on(0, 0)]), &cfg, &mut rng)?;
    let err = (a as f64 - 5.0).abs() + (reset as f64 - 5.0).abs() + (next.next_state.aoi[0] as f64 - 5.0).abs();
    Ok(CheckReport::at_most(
        "aoi-partial-reset",
        err,
        0.0,
        format!("update -> {a}, step -> {}", next.next_state.aoi[0]),
    ))
}

/// Per-user rates against a direct evaluation of the SIC rate formula, as
/// the worst relative error over `cases` random slots.
pub fn rate_oracle(seed: u64, cases: usize) -> Result<CheckReport> {
    let mut rng = rng_from_seed(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let users = rng.random_range(1..=6);
        let subcarriers = rng.random_range(1..=3);
        let radio = RadioConfig {
            noise_w: 10f64.powf(rng.random_range(-4.0..-1.0)),
            ..RadioConfig::uniform(subcarriers, 1e6, 0.1, 4)
        };
        let gains: Vec<f64> = (0..users * subcarriers).map(|_| rng.random_range(0.01..3.0)).collect();
        let gains = GainMatrix::new(users, subcarriers, gains)?;
        let mut a = SlotAssignment::idle(users);
        let mut load = vec![0; subcarriers];
        for u in 0..users {
            let n = rng.random_range(0..subcarriers);
            if rng.random_bool(0.8) && load[n] < 2 {
                load[n] += 1;
                a.subcarrier[u] = Some(n);
                a.power_w[u] = rng.random_range(0.0..=radio.p_max_w);
            }
        }
        let rates = slot_rates(&a, &gains, &radio)?;
        for u in 0..users {
            let expected = direct_rate(u, &a, &gains, &radio);
            let err = (rates[u] - expected).abs() / expected.abs().max(1e-300);
            worst = worst.max(if expected == 0.0 { rates[u].abs() } else { err });
        }
    }
    Ok(CheckReport::at_most(
        "rate-formula",
        worst,
        1e-12,
        format!("{cases} random slots, max relative error"),
    ))
}

fn direct_rate(u: usize, a: &SlotAssignment, gains: &GainMatrix, radio: &RadioConfig) -> f64 {
    let Some(n) = a.subcarrier[u] else { return 0.0 };
    let gu = gains.get(u, n);
    // Co-channel users decoded after u: larger gain, or equal gain and larger index.
    let interference: f64 = (0..a.subcarrier.len())
        .filter(|&v| v != u && a.subcarrier[v] == Some(n))
        .filter(|&v| gains.get(v, n) > gu || (gains.get(v, n) == gu && v > u))
        .map(|v| a.power_w[v] * gains.get(v, n))
        .sum();
    radio.bandwidth_hz * (1.0 + a.power_w[u] * gu / (radio.noise_w + interference)).log2()
}

/// Tiny instance used by the gradient checks: three users, two subcarriers,
/// two power levels, width 8, one layer, one head.
pub fn toy_gradient_setup(seed: u64) -> Result<(EnvConfig, ActorCritic)> {
    let mut env = EnvConfig::with_users(3)?;
    env.radio = RadioConfig::uniform(2, 1e6, 0.1, 2);
    let mut net = NetConfig::for_env(&env, NetKind::Transformer, 8, 1, 1);
    net.d_ff = 16;
    Ok((env, ActorCritic::new(net, seed)?))
}

struct ToyBatch {
    features: Tensor,
    actions: Vec<JointAction>,
    old_log_probs: Vec<f64>,
    advantages: Vec<f64>,
    targets: Vec<f64>,
}

fn toy_batch(env: &EnvConfig, model: &ActorCritic, rng: &mut Rng, size: usize) -> Result<ToyBatch> {
    let states: Vec<Tensor> = (0..size)
        .map(|_| state_features(&sample_state(env, 40, rng), env))
        .collect();
    let refs: Vec<&Tensor> = states.iter().collect();
    let outs = model.actor_forward_batch(&refs)?;
    let mut actions = Vec::with_capacity(size);
    let mut old = Vec::with_capacity(size);
    for out in &outs {
        let s = sample_masked_action(out, rng);
        // Offsets keep the ratio away from 1 so the clip branch is exercised.
        old.push(s.log_prob + rng.random_range(-0.4..0.4));
        actions.push(s.action);
    }
    Ok(ToyBatch {
        features: stack(&refs)?,
        actions,
        old_log_probs: old,
        advantages: (0..size).map(|_| rng.random_range(-2.0..2.0)).collect(),
        targets: (0..size).map(|_| rng.random_range(-3.0..0.0)).collect(),
    })
}

/// Finite-difference checks of the actor loss, the critic loss and the full
/// PPO loss on the tiny instance.
pub fn gradient_checks(seed: u64) -> Result<Vec<CheckReport>> {
    let (env, model) = toy_gradient_setup(seed)?;
    let mut rng = rng_from_seed(seed ^ 0x9a7d);
    let batch = toy_batch(&env, &model, &mut rng, 5)?;
    let users = env.users();
    let run = |name: &str, cfg: PpoConfig, critic_only: bool| -> Result<CheckReport> {
        let mut store: ParamStore = model.store.clone();
        let worst = finite_diff_check(&mut store, 1e-6, |s: &ParamStore| {
            let mut tape = Tape::new();
            let mb = Minibatch {
                features: batch.features.clone(),
                users,
                actions: batch.actions.iter().collect(),
                old_log_probs: batch.old_log_probs.clone(),
                advantages: batch.advantages.clone(),
                value_targets: batch.targets.clone(),
            };
            if critic_only {
                let x = tape.constant(batch.features.clone());
                let v = model
                    .critic_tape(&mut tape, s, x, users)
                    .map_err(tensor_err)?;
                let t = tape.constant(Tensor::vector(batch.targets.clone()));
                let d = tape.sub(v, t)?;
                let sq = tape.square(d);
                let loss = tape.mean(sq);
                return Ok((tape, loss));
            }
            let vars = total_loss(&mut tape, &model, s, &mb, &cfg)
                .map_err(tensor_err)?;
            Ok((tape, vars.loss))
        })
        .map_err(aoi_core::Error::from)?;
        Ok(CheckReport::at_most(name, worst, 1e-4, "max relative error vs central differences"))
    };
    let actor = PpoConfig {
        c1: 0.0,
        ..PpoConfig::default()
    };
    Ok(vec![
        run("grad-actor-loss", actor, false)?,
        run("grad-critic-loss", PpoConfig::default(), true)?,
        run("grad-ppo-loss", PpoConfig::default(), false)?,
    ])
}

fn tensor_err(e: aoi_core::Error) -> aoi_autograd::TensorError {
    match e {
        aoi_core::Error::Tensor(t) => t,
        other => aoi_autograd::TensorError::Shape {
            op: "model",
            detail: other.to_string(),
        },
    }
}

/// Direct truncated double sum: `A_t = sum_l (gamma lambda)^l delta_{t+l}`
/// up to the end of `t`'s episode.
pub fn gae_direct(
    rewards: &[f64],
    values: &[f64],
    terminals: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    let n = rewards.len();
    let next_value = |k: usize| {
        if terminals[k] {
            0.0
        } else if k + 1 < n {
            values[k + 1]
        } else {
            bootstrap
        }
    };
    (0..n)
        .map(|t| {
            let mut total = 0.0;
            let mut k = t;
            loop {
                let delta = rewards[k] + gamma * next_value(k) - values[k];
                total += (gamma * lambda).powi((k - t) as i32) * delta;
                if terminals[k] || k + 1 == n {
                    break;
                }
                k += 1;
            }
            total
        })
        .collect()
}

/// Recursion against the direct sum on random 100-step traces with random
/// terminals, for lambda in {0.97, 0, 1}.
pub fn gae_oracle(seed: u64, traces: usize) -> CheckReport {
    let mut rng = rng_from_seed(seed ^ 0x6ae);
    let mut worst = 0.0f64;
    for _ in 0..traces {
        let rewards: Vec<f64> = (0..100).map(|_| rng.random_range(-5.0..1.0)).collect();
        let values: Vec<f64> = (0..100).map(|_| rng.random_range(-10.0..1.0)).collect();
        let terminals: Vec<bool> = (0..100).map(|_| rng.random_bool(0.05)).collect();
        let bootstrap = rng.random_range(-10.0..1.0);
        for lambda in [0.97, 0.0, 1.0] {
            let fast = compute_gae(&rewards, &values, &terminals, bootstrap, 0.99, lambda);
            let slow = gae_direct(&rewards, &values, &terminals, bootstrap, 0.99, lambda);
            for (a, b) in fast.advantages.iter().zip(&slow) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    CheckReport::at_most(
        "gae-direct-sum",
        worst,
        1e-10,
        format!("{traces} traces x lambda in {{0.97, 0, 1}}, max abs error"),
    )
}

#[derive(Clone, Copy)]
pub enum Sampler<'a> {
    Net(&'a ActorCritic),
    Random,
    RoundRobin,
    Greedy,
}

impl Sampler<'_> {
    fn name(&self) -> &'static str {
        match self {
            Sampler::Net(m) => m.cfg.kind.name(),
            Sampler::Random => "random",
            Sampler::RoundRobin => "round-robin",
            Sampler::Greedy => "greedy",
        }
    }
}

/// Independent C1-C3 check: at most one subcarrier per user (by
/// construction of the action type), a valid subcarrier index, at most two
/// users per subcarrier and a configured power level not above `p_max`.
pub fn violates_constraints(action: &JointAction, cfg: &EnvConfig) -> bool {
    let radio = &cfg.radio;
    if action.users().len() != cfg.users() {
        return true;
    }
    let mut load = vec![0usize; radio.subcarriers];
    for a in action.users() {
        if let Some(n) = a.subcarrier {
            if n >= radio.subcarriers {
                return true;
            }
            load[n] += 1;
            match radio.power_levels_w.get(a.power_level) {
                Some(&p) if p <= radio.p_max_w => {}
                _ => return true,
            }
        }
    }
    load.iter().any(|&l| l > 2)
}

/// Samples `samples` actions on random states and counts constraint
/// violations; network policies use masked sampling.
pub fn feasibility(cfg: &EnvConfig, policy: Sampler<'_>, samples: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = rng_from_seed(seed ^ 0xfea5);
    let mut violations = 0usize;
    let mut drawn = 0usize;
    while drawn < samples {
        let chunk = (samples - drawn).min(128);
        let states: Vec<EnvState> = (0..chunk).map(|_| sample_state(cfg, 60, &mut rng)).collect();
        let actions: Vec<JointAction> = match policy {
            Sampler::Net(model) => {
                let feats: Vec<Tensor> = states.iter().map(|s| state_features(s, cfg)).collect();
                let refs: Vec<&Tensor> = feats.iter().collect();
                let outs = model.actor_forward_batch(&refs)?;
                outs.iter().map(|o| sample_masked_action(o, &mut rng).action).collect()
            }
            Sampler::Random => (0..chunk).map(|_| random_policy_action(cfg, &mut rng)).collect(),
            Sampler::RoundRobin => states.iter().map(|s| round_robin_action(cfg, s.t)).collect(),
            Sampler::Greedy => states.iter().map(|s| max_aoi_greedy_action(s, cfg)).collect(),
        };
        violations += actions.iter().filter(|a| violates_constraints(a, cfg)).count();
        drawn += chunk;
    }
    Ok(CheckReport::at_most(
        &format!("feasibility-{}", policy.name()),
        violations as f64,
        0.0,
        format!("{samples} sampled actions, violation count"),
    ))
}

/// The exhaustive one-slot oracle must score at least as well as every
/// heuristic and both untrained networks' greedy actions on each frozen
/// state. `measured` is the number of states where it does not.
pub fn oracle_dominance(users: usize, subcarriers: usize, levels: usize, states: usize, seed: u64) -> Result<CheckReport> {
    let mut cfg = EnvConfig::with_users(users)?;
    cfg.radio = RadioConfig::uniform(subcarriers, 1e6, 0.1, levels);
    let nets: Vec<ActorCritic> = [NetKind::Transformer, NetKind::Mlp]
        .into_iter()
        .map(|k| ActorCritic::new(NetConfig::for_env(&cfg, k, 16, 2, 1), seed))
        .collect::<Result<_, _>>()?;
    let mut rng = rng_from_seed(seed ^ 0x0ac1e);
    let mut failures = 0usize;
    let mut margin = f64::INFINITY;
    for _ in 0..states {
        let state = sample_state(&cfg, 40, &mut rng);
        let (_, best) = brute_force_best_action(&state, &cfg)?;
        let feats = state_features(&state, &cfg);
        let mut rivals = vec![
            random_policy_action(&cfg, &mut rng),
            round_robin_action(&cfg, state.t),
            max_aoi_greedy_action(&state, &cfg),
        ];
        for net in &nets {
            let out = net.actor_forward(&feats)?;
            rivals.push(greedy_action(&out));
            rivals.push(sample_masked_action(&out, &mut rng).action);
        }
        for action in &rivals {
            let r = one_step_reward(&state, action, &cfg)?;
            margin = margin.min(best - r);
            if r > best {
                failures += 1;
            }
        }
    }
    Ok(CheckReport::at_most(
        "oracle-dominance",
        failures as f64,
        0.0,
        format!("{states} states at U={users}, N={subcarriers}, P={levels}; smallest margin {margin:.3e}"),
    ))
}

/// Row sums of every attention matrix on random states, plus the exact
/// single-user matrix.
pub fn attention_rows(env: &EnvConfig, net: &NetConfig, seed: u64) -> Result<CheckReport> {
    let model = ActorCritic::new(net.clone(), seed)?;
    let mut rng = rng_from_seed(seed ^ 0xa77);
    let mut worst = 0.0f64;
    let mut shape_ok = true;
    for _ in 0..8 {
        let out = model.actor_forward(&state_features(&sample_state(env, 60, &mut rng), env))?;
        let u = env.users();
        for a in &out.attention {
            shape_ok &= a.shape() == [net.n_heads, u, u];
            for row in a.data().chunks(u) {
                worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
                shape_ok &= row.iter().all(|&p| p >= 0.0);
            }
        }
    }
    let mut single_env = EnvConfig::with_users(1)?;
    single_env.radio = env.radio.clone();
    let mut single_net = net.clone();
    single_net.max_users = 1;
    let single = ActorCritic::new(single_net, seed)?;
    let out = single.actor_forward(&state_features(&sample_state(&single_env, 60, &mut rng), &single_env))?;
    let exact = out.attention.iter().all(|a| a.data().iter().all(|&p| p == 1.0));
    let passed = shape_ok && exact && worst <= 1e-6;
    Ok(CheckReport {
        name: "attention-rows".into(),
        passed,
        measured: worst,
        tolerance: 1e-6,
        detail: format!("max |row sum - 1|; shapes ok: {shape_ok}; single user exactly 1: {exact}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_gae_matches_worked_example() {
        let a = gae_direct(&[1.0, 1.0], &[0.5, 0.5], &[false, true], 0.0, 0.99, 0.97);
        assert!((a[0] - 1.47515).abs() < 1e-9 && (a[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn direct_rate_lone_user() {
        let radio = RadioConfig::uniform(8, 1e6, 0.1, 4);
        let gains = GainMatrix::new(1, 8, vec![1.0; 8]).unwrap();
        let mut a = SlotAssignment::idle(1);
        a.subcarrier[0] = Some(2);
        a.power_w[0] = 0.1;
        let r = direct_rate(0, &a, &gains, &radio);
        assert!((r - 125_000.0 * 101f64.log2()).abs() < 1e-6);
    }

    #[test]
    fn violation_detector_flags_three_on_one_subcarrier() {
        let mut cfg = EnvConfig::with_users(3).unwrap();
        cfg.radio = RadioConfig::uniform(1, 1e6, 0.1, 1);
        let crowded = JointAction(vec![UserAction::on(0, 0); 3]);
        assert!(violates_constraints(&crowded, &cfg));
        let mut ok = crowded.clone();
        ok.0[2] = UserAction::IDLE;
        assert!(!violates_constraints(&ok, &cfg));
        ok.0[0].power_level = 1;
        assert!(violates_constraints(&ok, &cfg));
    }

    #[test]
    fn quick_checks_pass() {
        assert!(aoi_example().unwrap().passed);
        assert!(rate_oracle(1, 500).unwrap().passed);
        assert!(gae_oracle(1, 5).passed);
        assert!(oracle_dominance(3, 2, 2, 20, 1).unwrap().passed);
    }
}

//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! `ACCEPTANCE_ONLY=1,2,10` restricts the run to the listed criteria
//! (criterion 7 and 9 reuse the runs of criterion 8 and pull it in).

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use aoi_autograd::{ParamStore, Tape, Tensor};
use aoi_core::baselines::{
    brute_force_best_action, evaluate_policy, max_aoi_greedy_action, random_policy_action, round_robin_action,
    BaselineKind,
};
use aoi_core::channel::{slot_rates, subcarrier_rate, GainMatrix, RadioConfig, SlotAssignment};
use aoi_core::env::{
    aoi_update, sample_state, state_features, step, EnvConfig, EnvState, JointAction, UserAction,
};
use aoi_core::nets::{greedy_action, sample_masked_action, stack, ActorCritic, NetConfig, NetKind};
use aoi_core::ppo::{compute_gae, total_loss, Minibatch, PpoConfig};
use aoi_core::{rng_from_seed, Rng};
use aoi_harness::commands;
use aoi_harness::records::read_attention;
use aoi_harness::run_dir::RunDir;
use aoi_harness::{load_config, ExperimentConfig, PolicyName};
use rand::Rng as _;

struct Verdict {
    passed: bool,
    detail: String,
}

impl Verdict {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Verdict {
            passed,
            detail: detail.into(),
        }
    }
}

fn toy_config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.toml")
}

// ---------------------------------------------------------------- 1

fn aoi_example() -> Result<Verdict> {
    let (a, reset) = aoi_update(7, 3, true);
    // The same slot through the environment: a lone user whose residual is
    // cleared by one slot of transmission.
    let mut cfg = EnvConfig::with_users(1)?;
    cfg.radio = RadioConfig::uniform(1, 1e6, 0.1, 1);
    let state = EnvState {
        aoi: vec![7],
        aoi_reset: vec![3],
        residual_bits: vec![1e5],
        gains: GainMatrix::new(1, 1, vec![1.0])?,
        t: 0,
    };
    let next = step(&state, &JointAction(vec![UserAction::on(0, 0)]), &cfg, &mut rng_from_seed(0))?;
    let stepped = next.next_state.aoi[0];
    Ok(Verdict::new(
        a == 5 && reset == 5 && stepped == 5 && next.completed[0],
        format!("7 - 3 + 1 -> update rule {a}, environment step {stepped}"),
    ))
}

// ---------------------------------------------------------------- 2

/// `B log2(1 + p_u g_u / (sigma + sum of p_i g_i over co-channel users
/// decoded after u))`, where users are decoded weakest gain first and equal
/// gains by ascending index.
fn eq1_rate(u: usize, n: usize, users_on_n: &[usize], p: &[f64], g: &[Vec<f64>], b: f64, sigma: f64) -> f64 {
    let mut order = users_on_n.to_vec();
    order.sort_by(|&x, &y| g[x][n].partial_cmp(&g[y][n]).unwrap().then(x.cmp(&y)));
    let pos = order.iter().position(|&x| x == u).unwrap();
    let interference: f64 = order[pos + 1..].iter().map(|&i| p[i] * g[i][n]).sum();
    b * (1.0 + p[u] * g[u][n] / (sigma + interference)).log2()
}

fn rate_oracle() -> Result<Verdict> {
    let mut rng = rng_from_seed(2024);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let users = rng.random_range(1..=8);
        let subcarriers = rng.random_range(1..=4);
        let sigma = 10f64.powf(rng.random_range(-5.0..-1.0));
        let radio = RadioConfig {
            noise_w: sigma,
            ..RadioConfig::uniform(subcarriers, 1e6, 0.1, 4)
        };
        let g: Vec<Vec<f64>> = (0..users)
            .map(|_| (0..subcarriers).map(|_| -rng.random::<f64>().ln()).collect())
            .collect();
        let gains = GainMatrix::from_rows(&g)?;
        let mut a = SlotAssignment::idle(users);
        let mut load = vec![0; subcarriers];
        for u in 0..users {
            let n = rng.random_range(0..subcarriers);
            if rng.random_bool(0.85) && load[n] < 2 {
                load[n] += 1;
                a.subcarrier[u] = Some(n);
                a.power_w[u] = rng.random_range(1e-4..=0.1);
            }
        }
        let rates = slot_rates(&a, &gains, &radio)?;
        for u in 0..users {
            let expected = match a.subcarrier[u] {
                None => 0.0,
                Some(n) => {
                    let on_n: Vec<usize> = (0..users).filter(|&v| a.subcarrier[v] == Some(n)).collect();
                    eq1_rate(u, n, &on_n, &a.power_w, &g, radio.bandwidth_hz, sigma)
                }
            };
            let err = if expected == 0.0 { rates[u].abs() } else { (rates[u] - expected).abs() / expected };
            worst = worst.max(err);
        }
    }

    // Two users on one 125 kHz subcarrier, both at 0.1 W, gains 1.0 and 0.5.
    let radio = RadioConfig::uniform(8, 1e6, 0.1, 4);
    let gains = GainMatrix::from_rows(&[vec![1.0; 8], vec![0.5; 8]])?;
    let mut pair = SlotAssignment::idle(2);
    pair.subcarrier = vec![Some(0), Some(0)];
    pair.power_w = vec![0.1, 0.1];
    let strong = subcarrier_rate(0, 0, &pair, &gains, &radio)?;
    let weak = subcarrier_rate(1, 0, &pair, &gains, &radio)?;
    let mut lone = pair.clone();
    lone.subcarrier[1] = None;
    lone.power_w[1] = 0.0;
    let alone = subcarrier_rate(0, 0, &lone, &gains, &radio)?;
    let strong_ref = 125_000.0 * 101f64.log2();
    let weak_ref = 125_000.0 * (1.0 + 0.05 / 0.101f64).log2();
    let pair_ok = (strong - 832_276.0).abs() <= 1.0
        && (alone - 832_276.0).abs() <= 1.0
        && (strong - strong_ref).abs() <= 1.0
        && (weak - weak_ref).abs() <= 1.0;
    Ok(Verdict::new(
        worst <= 1e-12 && pair_ok,
        format!(
            "max relative error {worst:.2e} over 10^4 slots (tol 1e-12); two-user rates {strong:.1} / {weak:.1} bits \
             vs direct evaluation {strong_ref:.1} / {weak_ref:.1} (tol 1 bit)"
        ),
    ))
}

// ---------------------------------------------------------------- 3

/// Central differences with step `h`, compared coordinate by coordinate
/// against the tape gradient: `|g_ad - g_fd| / max(1, |g_fd|)`.
fn central_difference_error<F>(store: &ParamStore, h: f64, f: F) -> Result<f64>
where
    F: Fn(&ParamStore) -> Result<(Tape, aoi_autograd::Var)>,
{
    let mut with_grads = store.clone();
    with_grads.zero_grad();
    let (tape, loss) = f(&with_grads)?;
    tape.backward(loss, &mut with_grads)?;
    let value = |s: &ParamStore| -> Result<f64> {
        let (tape, loss) = f(s)?;
        Ok(tape.value(loss).item())
    };
    let mut probe = store.clone();
    let mut worst = 0.0f64;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for k in 0..store.value(id).len() {
            let w = store.value(id).data()[k];
            probe.get_mut(id).value.data_mut()[k] = w + h;
            let up = value(&probe)?;
            probe.get_mut(id).value.data_mut()[k] = w - h;
            let down = value(&probe)?;
            probe.get_mut(id).value.data_mut()[k] = w;
            let fd = (up - down) / (2.0 * h);
            let ad = with_grads.get(id).grad.data()[k];
            worst = worst.max((ad - fd).abs() / fd.abs().max(1.0));
        }
    }
    Ok(worst)
}

fn gradients() -> Result<Verdict> {
    let mut env = EnvConfig::with_users(3)?;
    env.radio = RadioConfig::uniform(2, 1e6, 0.1, 2);
    let mut net = NetConfig::for_env(&env, NetKind::Transformer, 8, 1, 1);
    net.d_ff = 16;
    let model = ActorCritic::new(net, 31)?;
    let mut rng = rng_from_seed(32);
    let feats: Vec<Tensor> = (0..6).map(|_| state_features(&sample_state(&env, 40, &mut rng), &env)).collect();
    let refs: Vec<&Tensor> = feats.iter().collect();
    let outs = model.actor_forward_batch(&refs)?;
    let mut actions = Vec::new();
    let mut old = Vec::new();
    for o in &outs {
        let s = sample_masked_action(o, &mut rng);
        old.push(s.log_prob + rng.random_range(-0.4..0.4));
        actions.push(s.action);
    }
    let features = stack(&refs)?;
    let adv: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
    let targets: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..0.0)).collect();
    let batch = Minibatch {
        features: features.clone(),
        users: 3,
        actions: actions.iter().collect(),
        old_log_probs: old,
        advantages: adv,
        value_targets: targets.clone(),
    };
    let ppo_loss = |cfg: PpoConfig| {
        let batch = batch.clone();
        let model = &model;
        move |s: &ParamStore| -> Result<(Tape, aoi_autograd::Var)> {
            let mut tape = Tape::new();
            let vars = total_loss(&mut tape, model, s, &batch, &cfg)?;
            Ok((tape, vars.loss))
        }
    };
    let actor = central_difference_error(&model.store, 1e-6, ppo_loss(PpoConfig { c1: 0.0, ..PpoConfig::default() }))?;
    let critic = central_difference_error(&model.store, 1e-6, |s: &ParamStore| {
        let mut tape = Tape::new();
        let x = tape.constant(features.clone());
        let v = model.critic_tape(&mut tape, s, x, 3)?;
        let t = tape.constant(Tensor::vector(targets.clone()));
        let d = tape.sub(v, t)?;
        let sq = tape.square(d);
        let loss = tape.mean(sq);
        Ok((tape, loss))
    })?;
    let total = central_difference_error(&model.store, 1e-6, ppo_loss(PpoConfig::default()))?;
    let worst = actor.max(critic).max(total);
    Ok(Verdict::new(
        worst < 1e-4,
        format!("max relative error actor {actor:.2e}, critic {critic:.2e}, PPO total {total:.2e} (tol 1e-4)"),
    ))
}

// ---------------------------------------------------------------- 4

fn gae_sum(r: &[f64], v: &[f64], term: &[bool], boot: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = r.len();
    let v_next = |k: usize| if term[k] { 0.0 } else if k + 1 < n { v[k + 1] } else { boot };
    (0..n)
        .map(|t| {
            let end = (t..n).find(|&k| term[k]).unwrap_or(n - 1);
            (t..=end)
                .map(|k| (gamma * lambda).powi((k - t) as i32) * (r[k] + gamma * v_next(k) - v[k]))
                .sum()
        })
        .collect()
}

fn gae() -> Result<Verdict> {
    let mut rng = rng_from_seed(4);
    let mut worst = [0.0f64; 3];
    let lambdas = [0.97, 0.0, 1.0];
    for _ in 0..100 {
        let n = rng.random_range(50..=200);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..0.5)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-20.0..1.0)).collect();
        let term: Vec<bool> = (0..n).map(|_| rng.random_bool(0.03)).collect();
        let boot = rng.random_range(-20.0..1.0);
        for (i, &lambda) in lambdas.iter().enumerate() {
            let fast = compute_gae(&r, &v, &term, boot, 0.99, lambda);
            for (a, b) in fast.advantages.iter().zip(gae_sum(&r, &v, &term, boot, 0.99, lambda)) {
                worst[i] = worst[i].max((a - b).abs());
            }
        }
    }
    let max = worst.iter().cloned().fold(0.0, f64::max);
    Ok(Verdict::new(
        max <= 1e-10,
        format!(
            "max |recursion - direct sum| at lambda 0.97 / 0 / 1: {:.2e} / {:.2e} / {:.2e} (tol 1e-10)",
            worst[0], worst[1], worst[2]
        ),
    ))
}

// ---------------------------------------------------------------- 5

/// C1: one subcarrier per user (a user holds at most one choice) and a valid
/// index; C2: at most two users per subcarrier; C3: a configured power level
/// no higher than `p_max`.
fn violations(action: &JointAction, cfg: &EnvConfig) -> usize {
    let r = &cfg.radio;
    let mut load = vec![0usize; r.subcarriers];
    let mut bad = usize::from(action.0.len() != cfg.users());
    for a in &action.0 {
        if let Some(n) = a.subcarrier {
            if n >= r.subcarriers {
                bad += 1;
                continue;
            }
            load[n] += 1;
            if a.power_level >= r.power_levels_w.len() || r.power_levels_w[a.power_level] > r.p_max_w {
                bad += 1;
            }
        }
    }
    bad + load.iter().filter(|&&l| l > 2).count()
}

fn feasibility(cfg: &ExperimentConfig) -> Result<Verdict> {
    const SAMPLES: usize = 100_000;
    let env = cfg.env_config()?;
    let nets = [
        ActorCritic::new(cfg.net_config(NetKind::Transformer), 5)?,
        ActorCritic::new(cfg.net_config(NetKind::Mlp), 5)?,
    ];
    let mut rng = rng_from_seed(55);
    let mut parts = Vec::new();
    let mut total = 0;
    for policy in ["transformer", "mlp", "random", "round-robin", "greedy"] {
        let mut bad = 0;
        let mut drawn = 0;
        while drawn < SAMPLES {
            let states: Vec<EnvState> = (0..250).map(|_| sample_state(&env, 60, &mut rng)).collect();
            let actions: Vec<JointAction> = match policy {
                "transformer" | "mlp" => {
                    let net = &nets[usize::from(policy == "mlp")];
                    let feats: Vec<Tensor> = states.iter().map(|s| state_features(s, &env)).collect();
                    let refs: Vec<&Tensor> = feats.iter().collect();
                    net.actor_forward_batch(&refs)?
                        .iter()
                        .map(|o| sample_masked_action(o, &mut rng).action)
                        .collect()
                }
                "random" => states.iter().map(|_| random_policy_action(&env, &mut rng)).collect(),
                "round-robin" => states.iter().map(|s| round_robin_action(&env, s.t)).collect(),
                _ => states.iter().map(|s| max_aoi_greedy_action(s, &env)).collect(),
            };
            bad += actions.iter().map(|a| violations(a, &env)).sum::<usize>();
            drawn += actions.len();
        }
        total += bad;
        parts.push(format!("{policy} {bad}"));
    }
    Ok(Verdict::new(
        total == 0,
        format!("violations in 10^5 sampled actions each: {}", parts.join(", ")),
    ))
}

// ---------------------------------------------------------------- 6

/// Every joint action satisfying C1-C3, each user choosing idle or a
/// (subcarrier, level) pair.
fn all_joint_actions(users: usize, subcarriers: usize, levels: usize) -> Vec<JointAction> {
    let mut options = vec![UserAction::IDLE];
    for n in 0..subcarriers {
        for p in 0..levels {
            options.push(UserAction::on(n, p));
        }
    }
    let mut out = vec![Vec::new()];
    for _ in 0..users {
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<UserAction>| {
                options.iter().map(move |o| {
                    let mut next = prefix.clone();
                    next.push(*o);
                    next
                })
            })
            .collect();
    }
    out.into_iter()
        .map(JointAction)
        .filter(|a| (0..subcarriers).all(|n| a.0.iter().filter(|u| u.subcarrier == Some(n)).count() <= 2))
        .collect()
}

fn oracle_dominance() -> Result<Verdict> {
    let mut env = EnvConfig::with_users(3)?;
    env.radio = RadioConfig::uniform(2, 1e6, 0.1, 2);
    let actions = all_joint_actions(3, 2, 2);
    ensure!(actions.len() == 5 * 5 * 5 - 2 * 4 * 2, "enumeration size {}", actions.len());
    let nets = [
        ActorCritic::new(NetConfig::for_env(&env, NetKind::Transformer, 16, 2, 1), 6)?,
        ActorCritic::new(NetConfig::for_env(&env, NetKind::Mlp, 16, 2, 1), 6)?,
    ];
    let mut rng = rng_from_seed(66);
    let mut step_rng = rng_from_seed(67);
    let mut reward = |state: &EnvState, a: &JointAction, rng: &mut Rng| -> Result<f64> {
        let _ = rng;
        Ok(step(state, a, &env, &mut step_rng)?.reward)
    };
    let (mut beaten, mut mismatched, mut compared) = (0, 0, 0);
    let mut margin = f64::INFINITY;
    for _ in 0..1000 {
        let state = sample_state(&env, 40, &mut rng);
        let (best_action, best) = brute_force_best_action(&state, &env)?;
        let mut exhaustive = f64::NEG_INFINITY;
        for a in &actions {
            exhaustive = exhaustive.max(reward(&state, a, &mut rng)?);
        }
        if exhaustive != best || reward(&state, &best_action, &mut rng)? != best {
            mismatched += 1;
        }
        let feats = state_features(&state, &env);
        let mut rivals = vec![
            random_policy_action(&env, &mut rng),
            round_robin_action(&env, state.t),
            max_aoi_greedy_action(&state, &env),
        ];
        for net in &nets {
            let out = net.actor_forward(&feats)?;
            rivals.push(greedy_action(&out));
            rivals.push(sample_masked_action(&out, &mut rng).action);
        }
        for a in &rivals {
            let r = reward(&state, a, &mut rng)?;
            compared += 1;
            margin = margin.min(best - r);
            if r > best {
                beaten += 1;
            }
        }
    }
    Ok(Verdict::new(
        beaten == 0 && mismatched == 0,
        format!(
            "1000 frozen states at U=3, N=2, P=2 ({} feasible actions): oracle beaten {beaten} of {compared} comparisons, \
             smallest margin {margin:.3e}; oracle value differs from exhaustive recomputation in {mismatched} states",
            actions.len()
        ),
    ))
}

// ---------------------------------------------------------------- 8, 9

struct Runs {
    dir: tempfile::TempDir,
    cfg: ExperimentConfig,
}

impl Runs {
    fn path(&self, policy: &str, seed: u64) -> PathBuf {
        self.dir.path().join(format!("{policy}-{seed}"))
    }

    fn train(&self, policy: PolicyName, seed: u64, out: &Path) -> Result<()> {
        let mut cfg = self.cfg.clone();
        cfg.experiment.policy = policy;
        cfg.experiment.seed = seed;
        cfg.experiment.out = out.to_path_buf();
        commands::train(&cfg).with_context(|| format!("training {} seed {seed}", policy.as_str()))?;
        Ok(())
    }
}

const SEEDS: [u64; 3] = [1, 2, 3];

fn final_mean(run: &Path) -> Result<f64> {
    let rows = aoi_harness::records::read_metrics(&RunDir::new(run).metrics())?;
    let tail = &rows[rows.len() - rows.len() / 10..];
    Ok(tail.iter().map(|r| r.mean_reward).sum::<f64>() / tail.len() as f64)
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (m, var.sqrt())
}

fn learning_signal(runs: &Runs) -> Result<Verdict> {
    let start = Instant::now();
    let episodes = runs.cfg.ppo.episodes;
    ensure!(episodes >= 2000, "configured budget {episodes} is below 2000 episodes");
    let mut finals = [Vec::new(), Vec::new()];
    for &seed in &SEEDS {
        for (i, policy) in [PolicyName::Transformer, PolicyName::Mlp].into_iter().enumerate() {
            let out = runs.path(policy.as_str(), seed);
            let t = Instant::now();
            runs.train(policy, seed, &out)?;
            let f = final_mean(&out)?;
            eprintln!("  [8] {} seed {seed}: final-10% mean reward {f:.5} ({:.0} s)", policy.as_str(), t.elapsed().as_secs_f64());
            finals[i].push(f);
        }
    }
    let env = runs.cfg.env_config()?;
    let random = evaluate_policy(&mut BaselineKind::Random, &env, 50, &SEEDS, None)?.mean_reward;
    let greedy = evaluate_policy(&mut BaselineKind::MaxAoiGreedy, &env, 50, &SEEDS, None)?.mean_reward;
    let oracle = evaluate_policy(&mut BaselineKind::Oracle, &env, 1, &SEEDS, None)?.mean_reward;
    let reference = oracle.max(greedy);
    let (tf, tf_sd) = mean_sd(&finals[0]);
    let (mlp, mlp_sd) = mean_sd(&finals[1]);
    let pooled = ((tf_sd.powi(2) + mlp_sd.powi(2)) / 2.0).sqrt();
    let needed = random + 0.2 * (reference - random);
    let gate_a = tf >= needed;
    let gate_b = tf >= mlp - pooled;
    Ok(Verdict::new(
        gate_a && gate_b,
        format!(
            "transformer {tf:.5} (sd {tf_sd:.5}), mlp {mlp:.5} (sd {mlp_sd:.5}); random {random:.5}, \
             reference max(oracle {oracle:.4}, greedy {greedy:.5}) = {reference:.5}; \
             (a) needs >= {needed:.5}: {}; (b) needs >= {:.5}: {}; strict order transformer > mlp: {}; \
             {episodes} episodes x 3 seeds in {:.0} s",
            pass_word(gate_a),
            mlp - pooled,
            pass_word(gate_b),
            tf > mlp,
            start.elapsed().as_secs_f64()
        ),
    ))
}

fn reproducibility(runs: &Runs) -> Result<Verdict> {
    let first = runs.path("transformer", SEEDS[0]);
    let again = runs.dir.path().join("transformer-rerun");
    runs.train(PolicyName::Transformer, SEEDS[0], &again)?;
    let a = std::fs::read(RunDir::new(&first).metrics())?;
    let b = std::fs::read(RunDir::new(&again).metrics())?;
    Ok(Verdict::new(
        a == b,
        format!("metrics.csv of two seed-{} transformer runs: {} vs {} bytes, identical: {}", SEEDS[0], a.len(), b.len(), a == b),
    ))
}

// ---------------------------------------------------------------- 7

fn attention(runs: &Runs) -> Result<Verdict> {
    let run = runs.path("transformer", SEEDS[0]);
    let report = commands::export(&run, None)?;
    ensure!(!report.empty, "no snapshots exported");
    let users = runs.cfg.env.users;
    let (heads, layers) = (runs.cfg.model.heads, runs.cfg.model.layers);
    let mut worst = 0.0f64;
    let mut shape_ok = true;
    for &e in &report.episodes {
        let rows = read_attention(&RunDir::new(&run).export_episode(e))?;
        shape_ok &= rows.len() == layers * heads * users;
        for layer in 0..layers {
            for head in 0..heads {
                let block: Vec<_> = rows.iter().filter(|r| r.layer == layer && r.head == head).collect();
                shape_ok &= block.len() == users
                    && block.iter().enumerate().all(|(i, r)| r.row_user == i && r.weights.len() == users);
            }
        }
        for r in &rows {
            worst = worst.max((r.weights.iter().sum::<f64>() - 1.0).abs());
            shape_ok &= r.weights.iter().all(|&w| w >= 0.0);
        }
    }

    let mut single_cfg = runs.cfg.clone();
    single_cfg.env.users = 1;
    let env1 = single_cfg.env_config()?;
    let model = ActorCritic::new(single_cfg.net_config(NetKind::Transformer), 7)?;
    let out = model.actor_forward(&state_features(&sample_state(&env1, 30, &mut rng_from_seed(7)), &env1))?;
    let single_exact = out.attention.len() == layers
        && out.attention.iter().all(|a| a.shape() == [heads, 1, 1] && a.data().iter().all(|&w| w == 1.0));
    Ok(Verdict::new(
        worst <= 1e-6 && shape_ok && single_exact,
        format!(
            "{} exported snapshots (episodes {:?}): max |row sum - 1| {worst:.2e} (tol 1e-6); \
             [{heads}, {users}, {users}] per layer: {shape_ok}; single user alpha == [[1.0]]: {single_exact}",
            report.episodes.len(),
            report.episodes
        ),
    ))
}

// ---------------------------------------------------------------- 10

fn full_scale_defaults() -> Result<Verdict> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("empty.toml");
    std::fs::write(&path, "")?;
    let cfg = load_config(&path)?;
    let env = cfg.env_config()?;
    let ppo = cfg.ppo_config();
    let net = cfg.net_config(NetKind::Transformer);
    let rows: Vec<(&str, f64, f64)> = vec![
        ("Number of users", env.users() as f64, 20.0),
        ("Number of subcarriers", env.radio.subcarriers as f64, 8.0),
        ("Total system bandwidth (Hz)", env.radio.bandwidth_hz * env.radio.subcarriers as f64, 1e6),
        ("Fading parameter", env.radio.fading_mean, 1.0),
        ("Maximum transmission power (W)", env.radio.p_max_w, 0.1),
        ("Maximum tasks per user", env.max_tasks as f64, 3.0),
        ("PPO buffer capacity", ppo.buffer_capacity as f64, 16384.0),
        ("Transformer model dimension", net.d_model as f64, 256.0),
        ("Number of transformer heads", net.n_heads as f64, 8.0),
        ("Number of transformer layers", net.n_layers as f64, 3.0),
        ("Learning rate", ppo.learning_rate, 5e-5),
        ("Epsilon", ppo.clip_eps, 0.2),
        ("c1", ppo.c1, 0.5),
        ("c2", ppo.c2, 0.05),
        ("PPO update epochs", ppo.epochs as f64, 4.0),
        ("Batch size", ppo.batch_size as f64, 64.0),
        ("GAE parameter", ppo.gae_lambda, 0.97),
        ("Discount factor", ppo.gamma, 0.99),
        ("Number of episodes", ppo.episodes as f64, 50_000.0),
    ];
    let mut wrong: Vec<String> = rows
        .iter()
        .filter(|(_, got, want)| got != want)
        .map(|(name, got, want)| format!("{name}: {got} != {want}"))
        .collect();
    for (u, p) in env.profiles.iter().enumerate() {
        let expected = (15 + u as u32, 40.0 - 2.0 * u as f64, 1e6 + 0.25e6 * u as f64);
        if (p.aoi_threshold, p.penalty_weight, p.task_bits) != expected {
            wrong.push(format!("user {} profile {:?}", u + 1, (p.aoi_threshold, p.penalty_weight, p.task_bits)));
        }
    }
    Ok(Verdict::new(
        wrong.is_empty(),
        if wrong.is_empty() {
            format!("{} table rows and 20 user profiles match", rows.len())
        } else {
            wrong.join("; ")
        },
    ))
}

// ----------------------------------------------------------------

fn pass_word(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

fn run(id: u8, title: &str, f: impl FnOnce() -> Result<Verdict>) -> (u8, String, bool) {
    let start = Instant::now();
    let verdict = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(v)) => v,
        Ok(Err(e)) => Verdict::new(false, format!("error: {e:#}")),
        Err(p) => Verdict::new(
            false,
            format!(
                "panicked: {}",
                p.downcast_ref::<String>()
                    .map(String::as_str)
                    .or_else(|| p.downcast_ref::<&str>().copied())
                    .unwrap_or("?")
            ),
        ),
    };
    let line = format!(
        "criterion {id:>2} {} {title}: {} [{:.1} s]",
        if verdict.passed { "PASS" } else { "FAIL" },
        verdict.detail,
        start.elapsed().as_secs_f64()
    );
    println!("{line}");
    (id, line, verdict.passed)
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    // A libtest-style name filter that does not match skips the suite.
    if let Some(filter) = args.iter().find(|a| !a.starts_with('-')) {
        if !"acceptance".contains(filter.as_str()) {
            return ExitCode::SUCCESS;
        }
    }
    let only: Option<Vec<u8>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |id: u8| only.as_ref().is_none_or(|o| o.contains(&id));

    let toy = match load_config(&toy_config_path()) {
        Ok(c) => c,
        Err(e) => {
            println!("cannot load the toy configuration: {e}");
            return ExitCode::FAILURE;
        }
    };
    let mut results = Vec::new();
    let mut add = |id: u8, title: &str, f: &mut dyn FnMut() -> Result<Verdict>| {
        if wanted(id) {
            results.push(run(id, title, f));
        }
    };
    add(1, "AoI partial reset", &mut aoi_example);
    add(2, "rate formula", &mut rate_oracle);
    add(3, "gradients", &mut gradients);
    add(4, "GAE", &mut gae);
    add(5, "feasibility", &mut || feasibility(&toy));
    add(6, "oracle dominance", &mut oracle_dominance);
    add(10, "full-scale defaults", &mut full_scale_defaults);

    if wanted(7) || wanted(8) || wanted(9) {
        let runs = Runs {
            dir: tempfile::tempdir().expect("temporary directory"),
            cfg: toy.clone(),
        };
        add(8, "learning signal", &mut || learning_signal(&runs));
        add(9, "reproducibility", &mut || reproducibility(&runs));
        add(7, "attention", &mut || attention(&runs));
    }

    results.sort_by_key(|r| r.0);
    println!("\nacceptance summary");
    for (_, line, _) in &results {
        println!("{line}");
    }
    let failed = results.iter().filter(|r| !r.2).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

use aoi_autograd::{finite_diff_check, Adam, ParamStore, Tape, Tensor};
use proptest::prelude::*;
use rand::Rng as _;

use super::*;
use crate::channel::RadioConfig;
use crate::env::{sample_state, state_features, EnvConfig, JointAction};
use crate::nets::{evaluate_action, sample_masked_action, stack, ActorCritic, NetConfig, NetKind};
use crate::{rng_from_seed, Rng};

/// `A_t = sum_l (gamma lambda)^l delta_{t+l}`, summed term by term until the
/// end of `t`'s episode.
fn gae_double_sum(r: &[f64], v: &[f64], term: &[bool], boot: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = r.len();
    (0..n)
        .map(|t| {
            let mut acc = 0.0;
            for k in t..n {
                let next = if term[k] {
                    0.0
                } else if k + 1 < n {
                    v[k + 1]
                } else {
                    boot
                };
                acc += (gamma * lambda).powi((k - t) as i32) * (r[k] + gamma * next - v[k]);
                if term[k] {
                    break;
                }
            }
            acc
        })
        .collect()
}

fn toy() -> (EnvConfig, ActorCritic) {
    let mut env = EnvConfig::with_users(3).unwrap();
    env.radio = RadioConfig::uniform(2, 1e6, 0.1, 2);
    let mut net = NetConfig::for_env(&env, NetKind::Transformer, 8, 1, 1);
    net.d_ff = 16;
    let model = ActorCritic::new(net, 5).unwrap();
    (env, model)
}

struct Batch {
    features: Tensor,
    actions: Vec<JointAction>,
    log_probs: Vec<f64>,
    advantages: Vec<f64>,
    targets: Vec<f64>,
}

impl Batch {
    fn minibatch(&self, users: usize) -> Minibatch<'_> {
        Minibatch {
            features: self.features.clone(),
            users,
            actions: self.actions.iter().collect(),
            old_log_probs: self.log_probs.clone(),
            advantages: self.advantages.clone(),
            value_targets: self.targets.clone(),
        }
    }
}

fn batch(env: &EnvConfig, model: &ActorCritic, rng: &mut Rng, size: usize) -> Batch {
    let feats: Vec<Tensor> = (0..size).map(|_| state_features(&sample_state(env, 40, rng), env)).collect();
    let refs: Vec<&Tensor> = feats.iter().collect();
    let outs = model.actor_forward_batch(&refs).unwrap();
    let sampled: Vec<_> = outs.iter().map(|o| sample_masked_action(o, rng)).collect();
    Batch {
        features: stack(&refs).unwrap(),
        log_probs: sampled.iter().map(|s| s.log_prob).collect(),
        actions: sampled.into_iter().map(|s| s.action).collect(),
        advantages: (0..size).map(|_| rng.random_range(-2.0..2.0)).collect(),
        targets: (0..size).map(|_| rng.random_range(-3.0..0.0)).collect(),
    }
}

#[test]
fn gae_recursion_matches_double_sum_on_random_traces() {
    let mut rng = rng_from_seed(11);
    for _ in 0..100 {
        let n = 100;
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..1.0)).collect();
        let term: Vec<bool> = (0..n).map(|_| rng.random_bool(0.07)).collect();
        let boot = rng.random_range(-5.0..1.0);
        for lambda in [0.97, 0.0, 1.0] {
            let fast = compute_gae(&r, &v, &term, boot, 0.99, lambda);
            let slow = gae_double_sum(&r, &v, &term, boot, 0.99, lambda);
            for t in 0..n {
                assert!((fast.advantages[t] - slow[t]).abs() < 1e-10);
                assert_eq!(fast.returns[t], fast.advantages[t] + v[t]);
            }
        }
    }
}

#[test]
fn clip_objective_examples() {
    assert_eq!(clip_objective(&[0.3, -1.0], &[0.3, -1.0], &[2.0, -1.0], 0.2), 0.5);
    let up = clip_objective(&[1.5f64.ln()], &[0.0], &[1.0], 0.2);
    assert!((up - 1.2).abs() < 1e-12);
    let down = clip_objective(&[0.5f64.ln()], &[0.0], &[-1.0], 0.2);
    assert!((down + 0.8).abs() < 1e-12);
}

#[test]
fn normalized_advantages_have_zero_mean_unit_spread() {
    let a = normalize(&[1.0, 2.0, 3.0, 6.0]);
    let mean = a.iter().sum::<f64>() / 4.0;
    let var = a.iter().map(|x| x * x).sum::<f64>() / 4.0;
    assert!(mean.abs() < 1e-12);
    assert!((var - 1.0).abs() < 1e-6);
    assert_eq!(normalize(&[0.0, 0.0]), vec![0.0, 0.0]);
}

#[test]
fn table_one_update_takes_1024_optimizer_steps() {
    assert_eq!(PpoConfig::default().steps_per_update(), 1024);
}

#[test]
fn update_runs_epochs_times_minibatch_count_adam_steps() {
    let (env, mut model) = toy();
    let mut rng = rng_from_seed(3);
    let cfg = PpoConfig {
        epochs: 3,
        batch_size: 32,
        buffer_capacity: 100,
        learning_rate: 1e-3,
        ..PpoConfig::default()
    };
    let mut buffer = RolloutBuffer::new(cfg.buffer_capacity);
    let b = batch(&env, &model, &mut rng, 100);
    for i in 0..100 {
        let rows: Vec<f64> = b.features.data()[i * 3 * 5..(i + 1) * 3 * 5].to_vec();
        buffer.push(
            Tensor::new(vec![3, 5], rows).unwrap(),
            b.actions[i].clone(),
            b.log_probs[i],
            b.targets[i],
            0.0,
            i % 20 == 19,
        );
    }
    update(&mut model, &Adam::new(cfg.learning_rate), &mut buffer, &cfg, &mut rng).unwrap();
    assert!(buffer.is_empty());
    let steps = model.store.iter().map(|p| p.step_count).collect::<Vec<_>>();
    assert!(steps.iter().all(|&s| s as usize == cfg.steps_per_update()));
    assert_eq!(cfg.steps_per_update(), 12);
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let (env, mut model) = toy();
    let before = model.store.records();
    let mut rng = rng_from_seed(8);
    let b = batch(&env, &model, &mut rng, 16);
    let mut buffer = RolloutBuffer::new(16);
    for i in 0..16 {
        let rows = b.features.data()[i * 15..(i + 1) * 15].to_vec();
        buffer.push(Tensor::new(vec![3, 5], rows).unwrap(), b.actions[i].clone(), b.log_probs[i], -1.0, 0.5, false);
    }
    let cfg = PpoConfig {
        learning_rate: 0.0,
        batch_size: 4,
        buffer_capacity: 16,
        ..PpoConfig::default()
    };
    update(&mut model, &Adam::new(0.0), &mut buffer, &cfg, &mut rng).unwrap();
    assert_eq!(model.store.records(), before);
}

#[test]
fn loss_without_value_and_entropy_terms_is_negative_clip_objective() {
    let (env, model) = toy();
    let mut rng = rng_from_seed(21);
    let mut b = batch(&env, &model, &mut rng, 6);
    for lp in &mut b.log_probs {
        *lp += rng.random_range(-0.5..0.5);
    }
    let cfg = PpoConfig {
        c1: 0.0,
        c2: 0.0,
        ..PpoConfig::default()
    };
    let mut tape = Tape::new();
    let vars = total_loss(&mut tape, &model, &model.store, &b.minibatch(3), &cfg).unwrap();
    let feats: Vec<Tensor> = (0..6)
        .map(|i| Tensor::new(vec![3, 5], b.features.data()[i * 15..(i + 1) * 15].to_vec()).unwrap())
        .collect();
    let new: Vec<f64> = feats
        .iter()
        .zip(&b.actions)
        .map(|(f, a)| evaluate_action(&model.actor_forward(f).unwrap(), a).unwrap().log_prob)
        .collect();
    let expected = -clip_objective(&new, &b.log_probs, &normalize(&b.advantages), cfg.clip_eps);
    assert!((tape.value(vars.loss).item() - expected).abs() < 1e-12);
}

#[test]
fn perfect_value_fit_has_zero_value_loss() {
    let (env, model) = toy();
    let mut rng = rng_from_seed(4);
    let mut b = batch(&env, &model, &mut rng, 5);
    b.targets = (0..5)
        .map(|i| {
            let f = Tensor::new(vec![3, 5], b.features.data()[i * 15..(i + 1) * 15].to_vec()).unwrap();
            model.critic_forward(&f).unwrap()
        })
        .collect();
    let mut tape = Tape::new();
    let vars = total_loss(&mut tape, &model, &model.store, &b.minibatch(3), &PpoConfig::default()).unwrap();
    assert!(vars.stats(&tape).value_loss < 1e-24);
}

#[test]
fn zero_advantages_with_unchanged_policy_give_no_clip_gradient() {
    let (env, mut model) = toy();
    let mut rng = rng_from_seed(9);
    let mut b = batch(&env, &model, &mut rng, 6);
    b.advantages = vec![0.0; 6];
    let cfg = PpoConfig {
        c1: 0.0,
        c2: 0.0,
        ..PpoConfig::default()
    };
    let mut tape = Tape::new();
    let vars = total_loss(&mut tape, &model, &model.store, &b.minibatch(3), &cfg).unwrap();
    model.store.zero_grad();
    tape.backward(vars.loss, &mut model.store).unwrap();
    for p in model.store.iter() {
        assert!(p.grad.data().iter().all(|&g| g == 0.0), "{} has a gradient", p.name);
    }
}

#[test]
fn total_loss_gradient_matches_finite_differences() {
    let (env, model) = toy();
    let mut rng = rng_from_seed(17);
    let mut b = batch(&env, &model, &mut rng, 5);
    for lp in &mut b.log_probs {
        *lp += rng.random_range(-0.4..0.4);
    }
    let mut store: ParamStore = model.store.clone();
    let worst = finite_diff_check(&mut store, 1e-6, |s: &ParamStore| {
        let mut tape = Tape::new();
        let vars = total_loss(&mut tape, &model, s, &b.minibatch(3), &PpoConfig::default()).expect("toy loss");
        Ok((tape, vars.loss))
    })
    .unwrap();
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn value_target_variants() {
    assert_eq!(value_targets(ValueTarget::GaeReturn, &[1.0, 2.0], &[3.0, 4.0]), vec![1.0, 2.0]);
    assert_eq!(value_targets(ValueTarget::Reward, &[1.0, 2.0], &[3.0, 4.0]), vec![3.0, 4.0]);
}

#[test]
fn config_invariants_are_enforced() {
    assert!(PpoConfig::default().validate().is_ok());
    for bad in [
        PpoConfig { gamma: 1.0, ..PpoConfig::default() },
        PpoConfig { gamma: 0.0, ..PpoConfig::default() },
        PpoConfig { gae_lambda: 1.5, ..PpoConfig::default() },
        PpoConfig { clip_eps: 0.0, ..PpoConfig::default() },
        PpoConfig { batch_size: 0, ..PpoConfig::default() },
    ] {
        assert!(bad.validate().is_err());
    }
}

#[test]
fn snapshot_schedule_covers_start_middle_and_end() {
    let s = snapshot_episodes(2000, &DEFAULT_SNAPSHOT_FRACTIONS);
    assert_eq!(s.into_iter().collect::<Vec<_>>(), vec![0, 200, 500, 1000, 1400, 1999]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn clip_objective_depends_only_on_log_ratio(
        rows in proptest::collection::vec((-3.0f64..3.0, -0.5f64..0.5, -2.0f64..2.0), 1..20),
        shift in -50.0f64..50.0,
    ) {
        let old: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let new: Vec<f64> = rows.iter().map(|r| r.0 + r.1).collect();
        let adv: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let old_s: Vec<f64> = old.iter().map(|x| x + shift).collect();
        let new_s: Vec<f64> = new.iter().map(|x| x + shift).collect();
        let a = clip_objective(&new, &old, &adv, 0.2);
        let b = clip_objective(&new_s, &old_s, &adv, 0.2);
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn gae_matches_double_sum(
        steps in proptest::collection::vec((-2.0f64..1.0, -4.0f64..1.0, proptest::bool::weighted(0.1)), 1..60),
        boot in -4.0f64..1.0,
        lambda in 0.0f64..=1.0,
    ) {
        let r: Vec<f64> = steps.iter().map(|s| s.0).collect();
        let v: Vec<f64> = steps.iter().map(|s| s.1).collect();
        let term: Vec<bool> = steps.iter().map(|s| s.2).collect();
        let fast = compute_gae(&r, &v, &term, boot, 0.99, lambda);
        let slow = gae_double_sum(&r, &v, &term, boot, 0.99, lambda);
        for (a, b) in fast.advantages.iter().zip(&slow) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }
}

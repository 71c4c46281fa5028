//! Masked sequential action distribution.
//!
//! Users decide in ascending index. User `k`'s channel options are masked by
//! [`feasibility_mask`] given the subcarriers of users `0..k`, so a sampled
//! joint action always respects the two-users-per-subcarrier limit. Power is
//! drawn only for transmitting users.
//!
//! The plain-`f64` path here and the tape path in [`policy_terms`] perform the
//! same floating-point operations in the same order, so a log-probability
//! recomputed on the tape equals the sampler's value exactly.

use aoi_autograd::{log_softmax_row, Tape, Tensor, Var, MASK_LOGIT};
use rand::Rng as _;

use super::ActorOutput;
use crate::env::{feasibility_mask, JointAction, UserAction};
use crate::{Error, Result, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct SampledAction {
    pub action: JointAction,
    pub log_prob: f64,
    pub entropies: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserTerms {
    pub channel_log_prob: f64,
    /// Zero for idle users.
    pub power_log_prob: f64,
    /// `H(channel) + (1 - p_idle) H(power)`.
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionEval {
    pub log_prob: f64,
    pub entropy: f64,
    pub per_user: Vec<UserTerms>,
}

fn mask_offset(open: bool) -> f64 {
    if open {
        0.0
    } else {
        MASK_LOGIT
    }
}

fn masked_log_probs(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    let shifted: Vec<f64> = logits.iter().zip(mask).map(|(&l, &m)| l + mask_offset(m)).collect();
    let mut out = vec![0.0; shifted.len()];
    log_softmax_row(&shifted, &mut out);
    out
}

fn log_probs(logits: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    log_softmax_row(logits, &mut out);
    out
}

fn entropy_of(log_probs: &[f64]) -> f64 {
    -log_probs.iter().fold(0.0, |acc, &l| acc + l.exp() * l)
}

/// Inverse-CDF draw; zero-probability entries are never returned.
fn categorical(log_probs: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &l) in log_probs.iter().enumerate() {
        let p = l.exp();
        if p == 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > values[best] { i } else { best })
}

fn to_user_action(channel: usize, power: usize) -> UserAction {
    if channel == 0 {
        UserAction::IDLE
    } else {
        UserAction::on(channel - 1, power)
    }
}

pub fn sample_masked_action(out: &ActorOutput, rng: &mut Rng) -> SampledAction {
    let n = out.subcarriers();
    let mut chosen: Vec<Option<usize>> = Vec::with_capacity(out.users());
    let mut actions = Vec::with_capacity(out.users());
    for u in 0..out.users() {
        let mask = feasibility_mask(&chosen, n);
        let ch = categorical(&masked_log_probs(out.channel_logits.row(u), &mask), rng);
        let pw = if ch == 0 {
            0
        } else {
            categorical(&log_probs(out.power_logits.row(u)), rng)
        };
        let a = to_user_action(ch, pw);
        chosen.push(a.subcarrier);
        actions.push(a);
    }
    let action = JointAction(actions);
    let eval = evaluate_action(out, &action).expect("sampled actions are feasible");
    SampledAction {
        action,
        log_prob: eval.log_prob,
        entropies: eval.per_user.iter().map(|t| t.entropy).collect(),
    }
}

/// Most likely option per user under the same sequential masking.
pub fn greedy_action(out: &ActorOutput) -> JointAction {
    let n = out.subcarriers();
    let mut chosen: Vec<Option<usize>> = Vec::with_capacity(out.users());
    let mut actions = Vec::with_capacity(out.users());
    for u in 0..out.users() {
        let mask = feasibility_mask(&chosen, n);
        let ch = argmax(&masked_log_probs(out.channel_logits.row(u), &mask));
        let a = to_user_action(ch, argmax(out.power_logits.row(u)));
        chosen.push(a.subcarrier);
        actions.push(a);
    }
    JointAction(actions)
}

pub fn evaluate_action(out: &ActorOutput, action: &JointAction) -> Result<ActionEval> {
    let (users, n, levels) = (out.users(), out.subcarriers(), out.power_logits.cols());
    if action.0.len() != users {
        return Err(Error::Contract(format!("action covers {} of {users} users", action.0.len())));
    }
    let mut chosen: Vec<Option<usize>> = Vec::with_capacity(users);
    let mut per_user = Vec::with_capacity(users);
    for (u, a) in action.0.iter().enumerate() {
        let mask = feasibility_mask(&chosen, n);
        let ci = a.channel_index();
        if ci > n || !mask[ci] {
            return Err(Error::Contract(format!(
                "user {u}: channel option {ci} is masked given earlier users"
            )));
        }
        if a.power_level >= levels {
            return Err(Error::Contract(format!(
                "user {u}: power level {} out of {levels}",
                a.power_level
            )));
        }
        let lc = masked_log_probs(out.channel_logits.row(u), &mask);
        let lp = log_probs(out.power_logits.row(u));
        let nonidle = if ci == 0 { 0.0 } else { 1.0 };
        let idle_weight = -lc[0].exp() + 1.0;
        per_user.push(UserTerms {
            channel_log_prob: lc[ci],
            power_log_prob: lp[a.power_level] * nonidle,
            entropy: entropy_of(&lc) + idle_weight * entropy_of(&lp),
        });
        chosen.push(a.subcarrier);
    }
    Ok(ActionEval {
        log_prob: per_user
            .iter()
            .fold(0.0, |acc, t| acc + (t.channel_log_prob + t.power_log_prob)),
        entropy: per_user.iter().fold(0.0, |acc, t| acc + t.entropy),
        per_user,
    })
}

/// Tape handles for a batch's joint log-probabilities and entropies, `[B]` each.
#[derive(Debug, Clone, Copy)]
pub struct PolicyVars {
    pub log_prob: Var,
    pub entropy: Var,
}

/// Differentiable counterpart of [`evaluate_action`] for a batch. `channel`
/// is `[B * U, N + 1]`, `power` is `[B * U, P]`.
pub fn policy_terms(tape: &mut Tape, channel: Var, power: Var, actions: &[&JointAction]) -> Result<PolicyVars> {
    let (rows, width) = tape.value(channel).dims2();
    let levels = tape.value(power).cols();
    let b = actions.len();
    if b == 0 || rows % b != 0 {
        return Err(Error::Contract(format!("{rows} logit rows for {b} actions")));
    }
    let users = rows / b;
    let n = width - 1;
    let mut mask = Vec::with_capacity(rows * width);
    let mut ch_idx = Vec::with_capacity(rows);
    let mut pw_idx = Vec::with_capacity(rows);
    let mut nonidle = Vec::with_capacity(rows);
    for action in actions {
        if action.0.len() != users {
            return Err(Error::Contract(format!("action covers {} of {users} users", action.0.len())));
        }
        let mut chosen: Vec<Option<usize>> = Vec::with_capacity(users);
        for (u, a) in action.0.iter().enumerate() {
            let m = feasibility_mask(&chosen, n);
            let ci = a.channel_index();
            if ci > n || !m[ci] || a.power_level >= levels {
                return Err(Error::Contract(format!("user {u}: action {a:?} infeasible under the mask")));
            }
            mask.extend(m.iter().map(|&open| mask_offset(open)));
            ch_idx.push(ci);
            pw_idx.push(a.power_level);
            nonidle.push(if ci == 0 { 0.0 } else { 1.0 });
            chosen.push(a.subcarrier);
        }
    }
    let mask = tape.constant(Tensor::new(vec![rows, width], mask)?);
    let nonidle = tape.constant(Tensor::vector(nonidle));

    let masked = tape.add(channel, mask)?;
    let lc = tape.log_softmax_rows(masked)?;
    let lp = tape.log_softmax_rows(power)?;
    let ch_lp = tape.pick_cols(lc, ch_idx)?;
    let pw_lp = tape.pick_cols(lp, pw_idx)?;
    let pw_lp = tape.mul(pw_lp, nonidle)?;
    let per_user = tape.add(ch_lp, pw_lp)?;
    let per_user = tape.reshape(per_user, vec![b, users])?;
    let log_prob = tape.row_sum(per_user)?;

    let h_ch = row_entropy(tape, lc)?;
    let h_pw = row_entropy(tape, lp)?;
    let p_ch = tape.exp(lc);
    let p_idle = tape.pick_cols(p_ch, vec![0; rows])?;
    let neg = tape.scale(p_idle, -1.0);
    let idle_weight = tape.add_scalar(neg, 1.0);
    let h_pw = tape.mul(idle_weight, h_pw)?;
    let ent = tape.add(h_ch, h_pw)?;
    let ent = tape.reshape(ent, vec![b, users])?;
    let entropy = tape.row_sum(ent)?;
    Ok(PolicyVars { log_prob, entropy })
}

fn row_entropy(tape: &mut Tape, log_probs: Var) -> Result<Var> {
    let p = tape.exp(log_probs);
    let pl = tape.mul(p, log_probs)?;
    let s = tape.row_sum(pl)?;
    Ok(tape.scale(s, -1.0))
}

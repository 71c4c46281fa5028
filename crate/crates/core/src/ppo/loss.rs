use aoi_autograd::{ParamStore, Tape, Tensor, Var};

use super::{PpoConfig, ValueTarget};
use crate::env::JointAction;
use crate::nets::{policy_terms, ActorCritic};
use crate::{Error, Result};

/// `mean(min(v A, clip(v, 1 - eps, 1 + eps) A))` with `v = exp(new - old)`.
pub fn clip_objective(logp_new: &[f64], logp_old: &[f64], adv: &[f64], eps: f64) -> f64 {
    let n = logp_new.len();
    assert!(logp_old.len() == n && adv.len() == n && n > 0);
    let total: f64 = (0..n)
        .map(|i| {
            let v = (logp_new[i] - logp_old[i]).exp();
            (v * adv[i]).min(v.clamp(1.0 - eps, 1.0 + eps) * adv[i])
        })
        .sum();
    total / n as f64
}

/// Subtracts the mean and divides by the (population) standard deviation
/// plus `1e-8`.
pub fn normalize(adv: &[f64]) -> Vec<f64> {
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    adv.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
}

/// One minibatch, already gathered from the buffer.
#[derive(Debug, Clone)]
pub struct Minibatch<'a> {
    /// `[B * U, d_in]`
    pub features: Tensor,
    pub users: usize,
    pub actions: Vec<&'a JointAction>,
    pub old_log_probs: Vec<f64>,
    /// Raw (unnormalized) advantages.
    pub advantages: Vec<f64>,
    pub value_targets: Vec<f64>,
}

/// Scalar loss handle plus diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub loss: Var,
    pub clip: Var,
    pub value_loss: Var,
    pub entropy: Var,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossStats {
    pub total: f64,
    pub clip: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

impl LossVars {
    pub fn stats(&self, tape: &Tape) -> LossStats {
        LossStats {
            total: tape.value(self.loss).item(),
            clip: tape.value(self.clip).item(),
            value_loss: tape.value(self.value_loss).item(),
            entropy: tape.value(self.entropy).item(),
        }
    }
}

/// `-(clip - c1 * value_loss + c2 * entropy)` on the tape, with advantages
/// normalized within the minibatch.
pub fn total_loss(
    tape: &mut Tape,
    model: &ActorCritic,
    store: &ParamStore,
    batch: &Minibatch<'_>,
    cfg: &PpoConfig,
) -> Result<LossVars> {
    let b = batch.actions.len();
    if batch.old_log_probs.len() != b || batch.advantages.len() != b || batch.value_targets.len() != b {
        return Err(Error::Contract("minibatch columns differ in length".into()));
    }
    let x = tape.constant(batch.features.clone());
    let actor = model.actor_tape(tape, store, x, batch.users)?;
    let terms = policy_terms(tape, actor.channel_logits, actor.power_logits, &batch.actions)?;

    let old = tape.constant(Tensor::vector(batch.old_log_probs.clone()));
    let adv = tape.constant(Tensor::vector(normalize(&batch.advantages)));
    let log_ratio = tape.sub(terms.log_prob, old)?;
    let ratio = tape.exp(log_ratio);
    let unclipped = tape.mul(ratio, adv)?;
    let clipped = tape.clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    let clipped = tape.mul(clipped, adv)?;
    let surrogate = tape.minimum(unclipped, clipped)?;
    let clip = tape.mean(surrogate);

    let value = model.critic_tape(tape, store, x, batch.users)?;
    let target = tape.constant(Tensor::vector(batch.value_targets.clone()));
    let err = tape.sub(value, target)?;
    let sq = tape.square(err);
    let value_loss = tape.mean(sq);

    let entropy = tape.mean(terms.entropy);

    let weighted_vf = tape.scale(value_loss, cfg.c1);
    let weighted_h = tape.scale(entropy, cfg.c2);
    let objective = tape.sub(clip, weighted_vf)?;
    let objective = tape.add(objective, weighted_h)?;
    let loss = tape.scale(objective, -1.0);
    Ok(LossVars {
        loss,
        clip,
        value_loss,
        entropy,
    })
}

/// Value-regression targets for the configured variant.
pub fn value_targets(kind: ValueTarget, returns: &[f64], rewards: &[f64]) -> Vec<f64> {
    match kind {
        ValueTarget::GaeReturn => returns.to_vec(),
        ValueTarget::Reward => rewards.to_vec(),
    }
}

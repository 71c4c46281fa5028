//! Actor-critic networks over per-user feature rows.
//!
//! Every forward pass runs on an [`aoi_autograd::Tape`]. A batch of `B`
//! states with `U` users is laid out as `[B * U, d_in]`, user-major within
//! each state.

mod layers;
mod mlp;
mod sampling;
mod transformer;

use std::io::{Read, Write};

use aoi_autograd::checkpoint::{self, CheckpointError};
use aoi_autograd::{ParamStore, Tape, Tensor, Var};

pub use layers::{Head, LayerNorm, Linear, LN_EPS};
pub use mlp::MlpTrunk;
pub use sampling::{
    evaluate_action, greedy_action, policy_terms, sample_masked_action, ActionEval, PolicyVars, SampledAction,
    UserTerms,
};

pub use transformer::{AttentionVars, EncoderLayer, Embedding, TransformerTrunk};

use crate::env::EnvConfig;
use crate::{rng_from_seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetKind {
    Transformer,
    Mlp,
}

impl NetKind {
    pub fn name(self) -> &'static str {
        match self {
            NetKind::Transformer => "transformer",
            NetKind::Mlp => "mlp",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub kind: NetKind,
    pub d_in: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub n_channel_actions: usize,
    pub n_power_actions: usize,
    /// Rows of the positional table, i.e. the largest supported user count.
    pub max_users: usize,
}

impl NetConfig {
    /// Sizes derived from `env`; `d_ff = 4 d_model`.
    pub fn for_env(env: &EnvConfig, kind: NetKind, d_model: usize, n_heads: usize, n_layers: usize) -> Self {
        NetConfig {
            kind,
            d_in: env.feature_dim(),
            d_model,
            n_heads,
            n_layers,
            d_ff: 4 * d_model,
            n_channel_actions: env.radio.subcarriers + 1,
            n_power_actions: env.radio.levels(),
            max_users: env.users(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.n_heads == 0 {
            return bad("model.d_model and model.heads must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "model.d_model = {} is not divisible by model.heads = {}",
                self.d_model, self.n_heads
            ));
        }
        if self.d_in == 0 || self.d_ff == 0 || self.max_users == 0 {
            return bad("feature width, model.d_ff and user count must be positive".into());
        }
        if self.n_channel_actions < 1 || self.n_power_actions < 1 {
            return bad("action heads need at least one output".into());
        }
        Ok(())
    }
}

/// Per-state actor output.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorOutput {
    /// `[U, N + 1]`, column 0 is idle.
    pub channel_logits: Tensor,
    /// `[U, P]`
    pub power_logits: Tensor,
    /// One `[heads, U, U]` tensor per encoder layer; empty for the MLP.
    pub attention: Vec<Tensor>,
}

impl ActorOutput {
    pub fn users(&self) -> usize {
        self.channel_logits.rows()
    }

    pub fn subcarriers(&self) -> usize {
        self.channel_logits.cols() - 1
    }
}

/// Tape handles of a batched actor pass.
#[derive(Debug, Clone)]
pub struct ActorVars {
    /// `[B * U, N + 1]`
    pub channel_logits: Var,
    /// `[B * U, P]`
    pub power_logits: Var,
    /// Per layer, `[B * heads * U, U]`.
    pub attention: Vec<Var>,
}

#[derive(Debug, Clone)]
pub enum Trunk {
    Transformer(TransformerTrunk),
    Mlp(MlpTrunk),
}

impl Trunk {
    fn new(store: &mut ParamStore, rng: &mut crate::Rng, name: &str, cfg: &NetConfig) -> Self {
        match cfg.kind {
            NetKind::Transformer => Trunk::Transformer(TransformerTrunk::new(store, rng, name, cfg)),
            NetKind::Mlp => Trunk::Mlp(MlpTrunk::new(store, rng, name, cfg)),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, users: usize) -> Result<(Var, Vec<Var>)> {
        match self {
            Trunk::Transformer(t) => t.forward(tape, store, x, users),
            Trunk::Mlp(m) => Ok((m.forward(tape, store, x, users)?, Vec::new())),
        }
    }

    pub fn embedding(&self) -> &Embedding {
        match self {
            Trunk::Transformer(t) => &t.embed,
            Trunk::Mlp(m) => &m.embed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Actor {
    pub trunk: Trunk,
    pub channel_head: Head,
    pub power_head: Head,
}

#[derive(Debug, Clone)]
pub struct Critic {
    pub trunk: Trunk,
    pub value_head: Head,
}

/// Actor and critic with separate parameters, held in one store
/// (`actor.*` and `critic.*`).
#[derive(Debug, Clone)]
pub struct ActorCritic {
    pub cfg: NetConfig,
    pub store: ParamStore,
    pub actor: Actor,
    pub critic: Critic,
}

const POLICY_OUT_GAIN: f64 = 0.01;

impl ActorCritic {
    pub fn new(cfg: NetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng_from_seed(seed);
        let mut store = ParamStore::new();
        let d = cfg.d_model;
        let actor = Actor {
            trunk: Trunk::new(&mut store, &mut rng, "actor.trunk", &cfg),
            channel_head: Head::new(&mut store, &mut rng, "actor.channel_head", d, cfg.n_channel_actions, POLICY_OUT_GAIN),
            power_head: Head::new(&mut store, &mut rng, "actor.power_head", d, cfg.n_power_actions, POLICY_OUT_GAIN),
        };
        let critic = Critic {
            trunk: Trunk::new(&mut store, &mut rng, "critic.trunk", &cfg),
            value_head: Head::new(&mut store, &mut rng, "critic.value_head", d, 1, 1.0),
        };
        Ok(ActorCritic {
            cfg,
            store,
            actor,
            critic,
        })
    }

    fn check_input(&self, x: &Tensor, users: usize) -> Result<usize> {
        let (rows, cols) = x.dims2();
        if cols != self.cfg.d_in || users == 0 || rows % users != 0 {
            return Err(Error::Contract(format!(
                "features {:?} do not match d_in = {} with {users} users per state",
                x.shape(),
                self.cfg.d_in
            )));
        }
        Ok(rows / users)
    }

    /// Batched actor pass over `x: [B * U, d_in]`, reading parameter values
    /// from `store` (normally `self.store`).
    pub fn actor_tape(&self, tape: &mut Tape, store: &ParamStore, x: Var, users: usize) -> Result<ActorVars> {
        let (h, attention) = self.actor.trunk.forward(tape, store, x, users)?;
        Ok(ActorVars {
            channel_logits: self.actor.channel_head.forward(tape, store, h)?,
            power_logits: self.actor.power_head.forward(tape, store, h)?,
            attention,
        })
    }

    /// Batched critic pass: mean-pooled trunk output through the value head,
    /// giving `[B]`.
    pub fn critic_tape(&self, tape: &mut Tape, store: &ParamStore, x: Var, users: usize) -> Result<Var> {
        let (h, _) = self.critic.trunk.forward(tape, store, x, users)?;
        let pooled = tape.group_mean(h, users)?;
        let v = self.critic.value_head.forward(tape, store, pooled)?;
        let b = tape.value(v).rows();
        Ok(tape.reshape(v, vec![b])?)
    }

    /// Actor outputs for a stack of states, each `[U, d_in]`.
    pub fn actor_forward_batch(&self, states: &[&Tensor]) -> Result<Vec<ActorOutput>> {
        let Some(first) = states.first() else {
            return Ok(Vec::new());
        };
        let users = first.rows();
        let x = stack(states)?;
        let b = self.check_input(&x, users)?;
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let vars = self.actor_tape(&mut tape, &self.store, xv, users)?;
        let ch = tape.value(vars.channel_logits);
        let pw = tape.value(vars.power_logits);
        let heads = self.cfg.n_heads;
        let mut outs = Vec::with_capacity(b);
        for g in 0..b {
            let rows = |t: &Tensor, width: usize| {
                Tensor::new(vec![users, width], t.data()[g * users * width..(g + 1) * users * width].to_vec())
            };
            let attention = vars
                .attention
                .iter()
                .map(|&a| {
                    let block = heads * users * users;
                    Tensor::new(vec![heads, users, users], tape.value(a).data()[g * block..(g + 1) * block].to_vec())
                })
                .collect::<std::result::Result<Vec<_>, _>>()?;
            outs.push(ActorOutput {
                channel_logits: rows(ch, ch.cols())?,
                power_logits: rows(pw, pw.cols())?,
                attention,
            });
        }
        Ok(outs)
    }

    pub fn actor_forward(&self, features: &Tensor) -> Result<ActorOutput> {
        Ok(self.actor_forward_batch(&[features])?.remove(0))
    }

    pub fn critic_forward_batch(&self, states: &[&Tensor]) -> Result<Vec<f64>> {
        let Some(first) = states.first() else {
            return Ok(Vec::new());
        };
        let users = first.rows();
        let x = stack(states)?;
        self.check_input(&x, users)?;
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let v = self.critic_tape(&mut tape, &self.store, xv, users)?;
        Ok(tape.value(v).data().to_vec())
    }

    pub fn critic_forward(&self, features: &Tensor) -> Result<f64> {
        Ok(self.critic_forward_batch(&[features])?[0])
    }

    pub fn save<W: Write>(&self, w: W) -> std::result::Result<(), CheckpointError> {
        checkpoint::save(w, &self.store)
    }

    /// Restores parameter values; names and shapes must match this network.
    pub fn load<R: Read>(&mut self, r: R) -> std::result::Result<(), CheckpointError> {
        checkpoint::load_into(r, &mut self.store)
    }
}

/// Concatenates `[U, d]` states into `[B * U, d]`.
pub fn stack(states: &[&Tensor]) -> Result<Tensor> {
    let (users, d) = states[0].dims2();
    let mut data = Vec::with_capacity(states.len() * users * d);
    for s in states {
        if s.shape() != [users, d] {
            return Err(Error::Contract(format!(
                "state shape {:?} differs from {:?}",
                s.shape(),
                [users, d]
            )));
        }
        data.extend_from_slice(s.data());
    }
    Ok(Tensor::new(vec![states.len() * users, d], data)?)
}

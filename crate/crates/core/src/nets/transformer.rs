use aoi_autograd::{ParamStore, Tape, Var};

use super::layers::{LayerNorm, Linear};
use super::NetConfig;
use crate::{Result, Rng};

/// Per-user embedding followed by a learned positional row per user index.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub proj: Linear,
    pub positions: aoi_autograd::ParamId,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, cfg: &NetConfig) -> Self {
        let proj = Linear::new(store, rng, &format!("{name}.proj"), cfg.d_in, cfg.d_model, 1.0);
        let table = super::layers::uniform(rng, &[cfg.max_users, cfg.d_model], 0.1);
        let positions = store.add(format!("{name}.positions"), table);
        Embedding { proj, positions }
    }

    /// `x` is `[batch * users, d_in]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, users: usize) -> Result<Var> {
        let table_rows = store.value(self.positions).shape()[0];
        if users > table_rows {
            return Err(crate::Error::Config(format!(
                "{users} users exceed the positional table of {table_rows} rows"
            )));
        }
        let h = self.proj.forward(tape, store, x)?;
        let pos = tape.param(store, self.positions);
        Ok(tape.add_tiled(h, pos, users)?)
    }
}

/// Post-norm encoder layer: multi-head self-attention and a position-wise
/// feed-forward block, each wrapped in a residual connection and layer norm.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub norm_attn: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
    pub norm_ff: LayerNorm,
    pub heads: usize,
    pub d_model: usize,
}

/// Intermediate values of one attention block, exposed for inspection.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub q: Var,
    pub k: Var,
    pub v: Var,
    /// `[batch * heads * users, users]`
    pub alpha: Var,
    pub mixed: Var,
}

impl EncoderLayer {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, cfg: &NetConfig) -> Self {
        let d = cfg.d_model;
        EncoderLayer {
            query: Linear::no_bias(store, rng, &format!("{name}.wq"), d, d),
            key: Linear::no_bias(store, rng, &format!("{name}.wk"), d, d),
            value: Linear::no_bias(store, rng, &format!("{name}.wv"), d, d),
            output: Linear::new(store, rng, &format!("{name}.wo"), d, d, 1.0),
            norm_attn: LayerNorm::new(store, &format!("{name}.norm_attn"), d),
            ff_in: Linear::new(store, rng, &format!("{name}.ff_in"), d, cfg.d_ff, 1.0),
            ff_out: Linear::new(store, rng, &format!("{name}.ff_out"), cfg.d_ff, d, 1.0),
            norm_ff: LayerNorm::new(store, &format!("{name}.norm_ff"), d),
            heads: cfg.n_heads,
            d_model: d,
        }
    }

    /// Query, key and value projections without bias.
    pub fn project_qkv(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<(Var, Var, Var)> {
        Ok((
            self.query.forward(tape, store, x)?,
            self.key.forward(tape, store, x)?,
            self.value.forward(tape, store, x)?,
        ))
    }

    pub fn attend(&self, tape: &mut Tape, store: &ParamStore, x: Var, users: usize) -> Result<AttentionVars> {
        let (q, k, v) = self.project_qkv(tape, store, x)?;
        let scale = 1.0 / (self.d_model as f64).sqrt();
        let alpha = tape.attention_scores(q, k, users, self.heads, scale)?;
        let mixed = tape.attention_mix(alpha, v, users, self.heads)?;
        Ok(AttentionVars { q, k, v, alpha, mixed })
    }

    /// Returns the layer output and its attention weights.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, users: usize) -> Result<(Var, Var)> {
        let att = self.attend(tape, store, x, users)?;
        let o = self.output.forward(tape, store, att.mixed)?;
        let r = tape.add(x, o)?;
        let h = self.norm_attn.forward(tape, store, r)?;
        let f = self.ff_in.forward(tape, store, h)?;
        let f = tape.relu(f);
        let f = self.ff_out.forward(tape, store, f)?;
        let r = tape.add(h, f)?;
        let out = self.norm_ff.forward(tape, store, r)?;
        Ok((out, att.alpha))
    }
}

#[derive(Debug, Clone)]
pub struct TransformerTrunk {
    pub embed: Embedding,
    pub layers: Vec<EncoderLayer>,
}

impl TransformerTrunk {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, cfg: &NetConfig) -> Self {
        let embed = Embedding::new(store, rng, &format!("{name}.embed"), cfg);
        let layers = (0..cfg.n_layers)
            .map(|l| EncoderLayer::new(store, rng, &format!("{name}.layer{l}"), cfg))
            .collect();
        TransformerTrunk { embed, layers }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, users: usize) -> Result<(Var, Vec<Var>)> {
        let mut h = self.embed.forward(tape, store, x, users)?;
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (out, alpha) = layer.forward(tape, store, h, users)?;
            attention.push(alpha);
            h = out;
        }
        Ok((h, attention))
    }
}

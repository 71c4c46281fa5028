use aoi_autograd::{ParamStore, Tape, Var};

use super::layers::Linear;
use super::transformer::Embedding;
use super::NetConfig;
use crate::{Result, Rng};

/// Ablation trunk: the same per-user embedding (with positional rows, so
/// user identity is still visible) followed by `n_layers` position-wise
/// `Linear -> ReLU` blocks. No information crosses between users.
#[derive(Debug, Clone)]
pub struct MlpTrunk {
    pub embed: Embedding,
    pub layers: Vec<Linear>,
}

impl MlpTrunk {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, cfg: &NetConfig) -> Self {
        let embed = Embedding::new(store, rng, &format!("{name}.embed"), cfg);
        let layers = (0..cfg.n_layers)
            .map(|l| Linear::new(store, rng, &format!("{name}.layer{l}"), cfg.d_model, cfg.d_model, 1.0))
            .collect();
        MlpTrunk { embed, layers }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, users: usize) -> Result<Var> {
        let mut h = self.embed.forward(tape, store, x, users)?;
        h = tape.relu(h);
        for layer in &self.layers {
            let z = layer.forward(tape, store, h)?;
            h = tape.relu(z);
        }
        Ok(h)
    }
}

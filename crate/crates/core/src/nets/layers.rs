use aoi_autograd::{ParamId, ParamStore, Tape, Tensor, Var};
use rand::Rng as _;

use crate::{Result, Rng};

/// Glorot-uniform `[fan_in, fan_out]` matrix scaled by `gain`.
pub(crate) fn glorot(rng: &mut Rng, fan_in: usize, fan_out: usize, gain: f64) -> Tensor {
    let a = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, &[fan_in, fan_out], a)
}

pub(crate) fn uniform(rng: &mut Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

/// Row-wise affine map `x W (+ b)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, fan_in: usize, fan_out: usize, gain: f64) -> Self {
        let weight = store.add(format!("{name}.weight"), glorot(rng, fan_in, fan_out, gain));
        let bias = Some(store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out])));
        Linear { weight, bias }
    }

    pub fn no_bias(store: &mut ParamStore, rng: &mut Rng, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let weight = store.add(format!("{name}.weight"), glorot(rng, fan_in, fan_out, 1.0));
        Linear { weight, bias: None }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let mut y = tape.matmul(x, w)?;
        if let Some(b) = self.bias {
            let b = tape.param(store, b);
            y = tape.add_row(y, b)?;
        }
        Ok(y)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

pub const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        LayerNorm {
            gain: store.add(format!("{name}.gain"), Tensor::full(&[width], 1.0)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[width])),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        Ok(tape.layer_norm(x, g, b, LN_EPS)?)
    }
}

/// Output head: linear, ReLU, linear.
#[derive(Debug, Clone)]
pub struct Head {
    pub hidden: Linear,
    pub out: Linear,
}

impl Head {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, width: usize, outputs: usize, out_gain: f64) -> Self {
        Head {
            hidden: Linear::new(store, rng, &format!("{name}.hidden"), width, width, 1.0),
            out: Linear::new(store, rng, &format!("{name}.out"), width, outputs, out_gain),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, store, x)?;
        let h = tape.relu(h);
        self.out.forward(tape, store, h)
    }
}

use crate::{Error, Result};

/// Regression target of the value loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueTarget {
    /// `A_t + V_old(s_t)`.
    GaeReturn,
    /// The one-step reward `r_t`.
    Reward,
}

impl ValueTarget {
    pub fn name(self) -> &'static str {
        match self {
            ValueTarget::GaeReturn => "gae-return",
            ValueTarget::Reward => "reward",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    /// Value-loss weight.
    pub c1: f64,
    /// Entropy-bonus weight.
    pub c2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub learning_rate: f64,
    /// Environment episodes to train for.
    pub episodes: usize,
    /// Global gradient-norm limit; `None` leaves gradients untouched.
    pub max_grad_norm: Option<f64>,
    pub value_target: ValueTarget,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.99,
            gae_lambda: 0.97,
            clip_eps: 0.2,
            c1: 0.5,
            c2: 0.05,
            epochs: 4,
            batch_size: 64,
            buffer_capacity: 16384,
            learning_rate: 5e-5,
            episodes: 50_000,
            max_grad_norm: None,
            value_target: ValueTarget::GaeReturn,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, msg: String| Err(Error::Config(format!("ppo.{key}: {msg}")));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return fail("gamma", format!("{} is outside (0, 1)", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return fail("gae_lambda", format!("{} is outside [0, 1]", self.gae_lambda));
        }
        if !(self.clip_eps > 0.0) {
            return fail("clip_eps", format!("{} must be > 0", self.clip_eps));
        }
        if !(self.c1 >= 0.0 && self.c2 >= 0.0) {
            return fail("c1", "loss weights must be non-negative".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate", format!("{} must be finite and >= 0", self.learning_rate));
        }
        for (key, v) in [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("buffer_capacity", self.buffer_capacity),
            ("episodes", self.episodes),
        ] {
            if v == 0 {
                return fail(key, "must be at least 1".into());
            }
        }
        if let Some(g) = self.max_grad_norm {
            if !(g > 0.0) {
                return fail("max_grad_norm", format!("{g} must be > 0"));
            }
        }
        Ok(())
    }

    /// Optimizer steps in one update over a full buffer.
    pub fn steps_per_update(&self) -> usize {
        self.epochs * self.buffer_capacity.div_ceil(self.batch_size)
    }
}

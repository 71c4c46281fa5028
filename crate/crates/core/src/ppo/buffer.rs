use aoi_autograd::Tensor;

use crate::env::JointAction;

/// Fixed-capacity trajectory store, appended in temporal order.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer {
    capacity: usize,
    pub features: Vec<Tensor>,
    pub actions: Vec<JointAction>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub terminals: Vec<bool>,
    /// `V(s)` of the state after the last stored step, used when that step
    /// is not terminal.
    pub bootstrap_value: f64,
}

impl RolloutBuffer {
    pub fn new(capacity: usize) -> Self {
        RolloutBuffer {
            capacity,
            features: Vec::with_capacity(capacity),
            actions: Vec::with_capacity(capacity),
            log_probs: Vec::with_capacity(capacity),
            rewards: Vec::with_capacity(capacity),
            values: Vec::with_capacity(capacity),
            terminals: Vec::with_capacity(capacity),
            bootstrap_value: 0.0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.len() >= self.capacity
    }

    pub fn push(&mut self, features: Tensor, action: JointAction, log_prob: f64, reward: f64, value: f64, terminal: bool) {
        debug_assert!(!self.is_full());
        self.features.push(features);
        self.actions.push(action);
        self.log_probs.push(log_prob);
        self.rewards.push(reward);
        self.values.push(value);
        self.terminals.push(terminal);
    }

    pub fn clear(&mut self) {
        self.features.clear();
        self.actions.clear();
        self.log_probs.clear();
        self.rewards.clear();
        self.values.clear();
        self.terminals.clear();
        self.bootstrap_value = 0.0;
    }
}

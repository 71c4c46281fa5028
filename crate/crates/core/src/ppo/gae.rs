/// Per-step advantages and value-regression targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Advantages {
    pub advantages: Vec<f64>,
    /// `A_t + V(s_t)`.
    pub returns: Vec<f64>,
}

/// Generalised advantage estimation by the backward recursion
/// `A_t = d_t + gamma lambda A_{t+1}`, restarted after every terminal step.
///
/// `bootstrap` stands in for `V(s_{T})` when the final step is not terminal.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    terminals: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Advantages {
    let n = rewards.len();
    assert!(values.len() == n && terminals.len() == n, "trace lengths differ");
    let mut advantages = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap;
    for t in (0..n).rev() {
        if terminals[t] {
            next_adv = 0.0;
            next_value = 0.0;
        }
        let delta = rewards[t] + gamma * next_value - values[t];
        next_adv = delta + gamma * lambda * next_adv;
        advantages[t] = next_adv;
        next_value = values[t];
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Advantages { advantages, returns }
}

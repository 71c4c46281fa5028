use rand::Rng as _;

use crate::env::{feasibility_mask, EnvConfig, EnvState, JointAction, UserAction};
use crate::Rng;

/// Uniform over the open channel options of each user in ascending order,
/// then a uniform power level for transmitting users.
pub fn random_policy_action(cfg: &EnvConfig, rng: &mut Rng) -> JointAction {
    let (n, levels) = (cfg.radio.subcarriers, cfg.radio.levels());
    let mut chosen: Vec<Option<usize>> = Vec::with_capacity(cfg.users());
    let mut actions = Vec::with_capacity(cfg.users());
    for _ in 0..cfg.users() {
        let open: Vec<usize> = feasibility_mask(&chosen, n)
            .iter()
            .enumerate()
            .filter(|(_, &ok)| ok)
            .map(|(i, _)| i)
            .collect();
        let pick = open[rng.random_range(0..open.len())];
        let a = if pick == 0 || levels == 0 {
            UserAction::IDLE
        } else {
            UserAction::on(pick - 1, rng.random_range(0..levels))
        };
        chosen.push(a.subcarrier);
        actions.push(a);
    }
    JointAction(actions)
}

/// Serves `min(U, 2N)` consecutive users starting at `(t * 2N) mod U`,
/// two per subcarrier in order, at the highest power level.
pub fn round_robin_action(cfg: &EnvConfig, t: usize) -> JointAction {
    let (users, n) = (cfg.users(), cfg.radio.subcarriers);
    let slots = 2 * n;
    let mut actions = vec![UserAction::IDLE; users];
    if users == 0 || n == 0 {
        return JointAction(actions);
    }
    let top = cfg.radio.levels() - 1;
    let start = (t % users) * (slots % users) % users;
    for k in 0..users.min(slots) {
        actions[(start + k) % users] = UserAction::on(k / 2, top);
    }
    JointAction(actions)
}

/// Users at risk of a violation next slot come first (by weight), then by
/// AoI, both descending, ties by index. Each takes its best-gain subcarrier
/// that still has room, at the highest power level.
pub fn max_aoi_greedy_action(state: &EnvState, cfg: &EnvConfig) -> JointAction {
    let (users, n) = (cfg.users(), cfg.radio.subcarriers);
    let mut order: Vec<usize> = (0..users).collect();
    let risk = |u: usize| {
        let p = &cfg.profiles[u];
        if state.aoi[u] + 1 > p.aoi_threshold {
            p.penalty_weight
        } else {
            0.0
        }
    };
    order.sort_by(|&a, &b| {
        risk(b)
            .total_cmp(&risk(a))
            .then(state.aoi[b].cmp(&state.aoi[a]))
            .then(a.cmp(&b))
    });
    let mut actions = vec![UserAction::IDLE; users];
    if n == 0 {
        return JointAction(actions);
    }
    let top = cfg.radio.levels() - 1;
    let mut load = vec![0usize; n];
    for u in order.into_iter().take(2 * n) {
        let best = (0..n)
            .filter(|&s| load[s] < 2)
            .fold(None, |best: Option<usize>, s| match best {
                Some(b) if state.gains.get(u, b) >= state.gains.get(u, s) => Some(b),
                _ => Some(s),
            })
            .expect("a subcarrier has room while fewer than 2N users are placed");
        load[best] += 1;
        actions[u] = UserAction::on(best, top);
    }
    JointAction(actions)
}

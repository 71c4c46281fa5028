use crate::env::{aoi_update, instantaneous_reward, EnvConfig, EnvState, JointAction, UserAction};
use crate::{Error, Result};

/// Largest feasible joint-action count the exhaustive search accepts.
pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

/// Joint actions satisfying C1–C3 with `levels` power levels: every user is
/// idle or on one of `subcarriers` subcarriers, at most two per subcarrier.
pub fn feasible_action_count(users: usize, subcarriers: usize, levels: usize) -> u128 {
    // ways[r] = assignments of r still-unplaced users to the subcarriers
    // processed so far (the rest idle).
    let p = levels as u128;
    let mut ways = vec![1u128; users + 1];
    for _ in 0..subcarriers {
        let prev = ways.clone();
        for r in 0..=users {
            let mut total = prev[r];
            if r >= 1 {
                total = total.saturating_add((r as u128).saturating_mul(p).saturating_mul(prev[r - 1]));
            }
            if r >= 2 {
                let pairs = (r * (r - 1) / 2) as u128;
                total = total.saturating_add(pairs.saturating_mul(p * p).saturating_mul(prev[r - 2]));
            }
            ways[r] = total;
        }
    }
    ways[users]
}

/// Reward of applying `action` to `state` for one slot with the gains held
/// fixed. Matches the reward of [`crate::env::step`].
pub fn one_step_reward(state: &EnvState, action: &JointAction, cfg: &EnvConfig) -> Result<f64> {
    let mut aoi = vec![0; cfg.users()];
    let opts = action.0.iter().map(|a| a.channel_index()).collect::<Vec<_>>();
    let levels = action.0.iter().map(|a| a.power_level).collect::<Vec<_>>();
    action.to_assignment(&cfg.radio)?.validate(&cfg.radio)?;
    Ok(reward_of(state, cfg, &opts, &levels, &mut aoi))
}

/// Rates for a complete choice, mirroring `subcarrier_rate` operation for
/// operation so completion decisions agree bit for bit.
fn reward_of(state: &EnvState, cfg: &EnvConfig, channel: &[usize], level: &[usize], aoi: &mut [u32]) -> f64 {
    let radio = &cfg.radio;
    let users = cfg.users();
    let mut first = vec![usize::MAX; radio.subcarriers];
    let mut second = vec![usize::MAX; radio.subcarriers];
    for u in 0..users {
        if channel[u] > 0 {
            let n = channel[u] - 1;
            if first[n] == usize::MAX {
                first[n] = u;
            } else {
                second[n] = u;
            }
        }
    }
    for u in 0..users {
        let rate = if channel[u] == 0 {
            0.0
        } else {
            let n = channel[u] - 1;
            let other = if first[n] == u { second[n] } else { first[n] };
            let signal = radio.power_levels_w[level[u]] * state.gains.get(u, n);
            // The later-decoded (stronger, or equal with higher index) user
            // interferes with the earlier one.
            let interference = if other == usize::MAX {
                0.0
            } else {
                let (gu, go) = (state.gains.get(u, n), state.gains.get(other, n));
                let u_first = gu.total_cmp(&go).then(u.cmp(&other)).is_lt();
                if u_first {
                    radio.power_levels_w[level[other]] * go
                } else {
                    0.0
                }
            };
            radio.bandwidth_hz * (1.0 + signal / (radio.noise_w + interference)).log2()
        };
        let done = state.residual_bits[u] - rate <= 0.0;
        aoi[u] = aoi_update(state.aoi[u], state.aoi_reset[u], done).0;
    }
    instantaneous_reward(aoi, cfg)
}

/// Exhaustive one-slot search. Options per user are ordered idle, then
/// `(subcarrier, level)` with the level varying fastest; joint actions are
/// visited lexicographically with user 0 most significant, and the first
/// maximiser is returned.
pub fn brute_force_best_action(state: &EnvState, cfg: &EnvConfig) -> Result<(JointAction, f64)> {
    let (users, n, levels) = (cfg.users(), cfg.radio.subcarriers, cfg.radio.levels());
    let count = feasible_action_count(users, n, levels);
    if count > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge {
            count,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let mut search = Search {
        state,
        cfg,
        levels,
        channel: vec![0; users],
        level: vec![0; users],
        load: vec![0; n],
        aoi: vec![0; users],
        best: None,
    };
    search.visit(0);
    let (channel, level, reward) = search.best.expect("the all-idle action is always feasible");
    let action = JointAction(
        channel
            .iter()
            .zip(&level)
            .map(|(&c, &p)| if c == 0 { UserAction::IDLE } else { UserAction::on(c - 1, p) })
            .collect(),
    );
    Ok((action, reward))
}

struct Search<'a> {
    state: &'a EnvState,
    cfg: &'a EnvConfig,
    levels: usize,
    channel: Vec<usize>,
    level: Vec<usize>,
    load: Vec<u8>,
    aoi: Vec<u32>,
    best: Option<(Vec<usize>, Vec<usize>, f64)>,
}

impl Search<'_> {
    fn visit(&mut self, u: usize) {
        if u == self.channel.len() {
            let r = reward_of(self.state, self.cfg, &self.channel, &self.level, &mut self.aoi);
            if self.best.as_ref().is_none_or(|b| r > b.2) {
                self.best = Some((self.channel.clone(), self.level.clone(), r));
            }
            return;
        }
        self.channel[u] = 0;
        self.level[u] = 0;
        self.visit(u + 1);
        for n in 0..self.load.len() {
            if self.load[n] >= 2 {
                continue;
            }
            self.load[n] += 1;
            self.channel[u] = n + 1;
            for p in 0..self.levels {
                self.level[u] = p;
                self.visit(u + 1);
            }
            self.load[n] -= 1;
        }
        self.channel[u] = 0;
        self.level[u] = 0;
    }
}

/// Counts the joint actions the search visits (used to cross-check
/// [`feasible_action_count`]).
pub fn enumerate_feasible(users: usize, subcarriers: usize, levels: usize) -> u128 {
    fn rec(u: usize, users: usize, load: &mut [u8], levels: usize) -> u128 {
        if u == users {
            return 1;
        }
        let mut total = rec(u + 1, users, load, levels);
        for n in 0..load.len() {
            if load[n] < 2 {
                load[n] += 1;
                total += levels as u128 * rec(u + 1, users, load, levels);
                load[n] -= 1;
            }
        }
        total
    }
    rec(0, users, &mut vec![0; subcarriers], levels)
}

//! Block Rayleigh fading and SIC rates on NOMA subcarriers.
//!
//! Gains are channel *power* gains, i.e. exponential with unit mean. On each
//! subcarrier the receiver decodes co-channel users in ascending gain order;
//! a user sees interference only from users decoded after it, so the
//! strongest user on a subcarrier is interference-free.

use rand_distr::{Distribution, Exp1};

use crate::{Error, Result, Rng};

/// Physical-layer parameters shared by every user.
#[derive(Debug, Clone, PartialEq)]
pub struct RadioConfig {
    pub subcarriers: usize,
    /// Bandwidth of one subcarrier in Hz. With unit slot duration, a rate in
    /// bit/s equals bits delivered per slot.
    pub bandwidth_hz: f64,
    pub noise_w: f64,
    pub p_max_w: f64,
    /// Allowed transmit powers, ascending, each in `(0, p_max_w]`.
    pub power_levels_w: Vec<f64>,
    /// Mean of the exponential power gain.
    pub fading_mean: f64,
}

impl Default for RadioConfig {
    /// 1 MHz split evenly over 8 subcarriers, 0.1 W budget with four uniform
    /// levels, noise 1e-3 W, unit-mean fading.
    fn default() -> Self {
        RadioConfig {
            power_levels_w: vec![0.025, 0.05, 0.075, 0.1],
            ..RadioConfig::uniform(8, 1e6, 0.1, 4)
        }
    }
}

impl RadioConfig {
    /// Evenly split `total_bandwidth_hz` over `subcarriers`, with `levels`
    /// uniformly spaced powers ending at `p_max_w`.
    pub fn uniform(subcarriers: usize, total_bandwidth_hz: f64, p_max_w: f64, levels: usize) -> Self {
        RadioConfig {
            subcarriers,
            bandwidth_hz: total_bandwidth_hz / subcarriers.max(1) as f64,
            noise_w: 1e-3,
            p_max_w,
            power_levels_w: (1..=levels).map(|k| p_max_w * k as f64 / levels as f64).collect(),
            fading_mean: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.bandwidth_hz > 0.0 && self.bandwidth_hz.is_finite()) {
            return bad(format!("radio.bandwidth must be > 0, got {}", self.bandwidth_hz));
        }
        if !(self.noise_w > 0.0 && self.noise_w.is_finite()) {
            return bad(format!("radio.noise_w must be > 0, got {}", self.noise_w));
        }
        if !(self.p_max_w > 0.0) {
            return bad(format!("radio.p_max_w must be > 0, got {}", self.p_max_w));
        }
        if !(self.fading_mean > 0.0) {
            return bad(format!("radio.fading_mean must be > 0, got {}", self.fading_mean));
        }
        if self.power_levels_w.is_empty() {
            return bad("radio.power_levels_w must not be empty".into());
        }
        if self.power_levels_w.windows(2).any(|w| w[0] >= w[1]) {
            return bad("radio.power_levels_w must be strictly ascending".into());
        }
        if self.power_levels_w.iter().any(|&p| !(p > 0.0 && p <= self.p_max_w)) {
            return bad(format!(
                "radio.power_levels_w must lie in (0, p_max_w = {}]",
                self.p_max_w
            ));
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        self.power_levels_w.len()
    }
}

/// Per-slot gains `g[u][n]`, stored row-major by user.
#[derive(Debug, Clone, PartialEq)]
pub struct GainMatrix {
    users: usize,
    subcarriers: usize,
    gains: Vec<f64>,
}

impl GainMatrix {
    pub fn new(users: usize, subcarriers: usize, gains: Vec<f64>) -> Result<Self> {
        if gains.len() != users * subcarriers {
            return Err(Error::Contract(format!(
                "gain matrix {users}x{subcarriers} needs {} entries, got {}",
                users * subcarriers,
                gains.len()
            )));
        }
        Ok(GainMatrix {
            users,
            subcarriers,
            gains,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.first().map_or(0, Vec::len);
        GainMatrix::new(rows.len(), n, rows.concat())
    }

    pub fn get(&self, user: usize, subcarrier: usize) -> f64 {
        self.gains[user * self.subcarriers + subcarrier]
    }

    pub fn user_row(&self, user: usize) -> &[f64] {
        &self.gains[user * self.subcarriers..(user + 1) * self.subcarriers]
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.gains
    }
}

/// Draws i.i.d. exponential gains with the given mean.
pub fn sample_gains(rng: &mut Rng, users: usize, subcarriers: usize, mean: f64) -> GainMatrix {
    let gains = (0..users * subcarriers)
        .map(|_| {
            // Exp1 can in principle return 0; gains must stay strictly positive.
            let g: f64 = Exp1.sample(rng);
            mean * g.max(f64::MIN_POSITIVE)
        })
        .collect();
    GainMatrix {
        users,
        subcarriers,
        gains,
    }
}

/// Channel and power choice of every user for one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotAssignment {
    /// `None` means the user stays silent.
    pub subcarrier: Vec<Option<usize>>,
    pub power_w: Vec<f64>,
}

impl SlotAssignment {
    pub fn idle(users: usize) -> Self {
        SlotAssignment {
            subcarrier: vec![None; users],
            power_w: vec![0.0; users],
        }
    }

    pub fn users(&self) -> usize {
        self.subcarrier.len()
    }

    /// Users on subcarrier `n`, in index order.
    pub fn occupants(&self, n: usize) -> impl Iterator<Item = usize> + '_ {
        self.subcarrier
            .iter()
            .enumerate()
            .filter(move |(_, s)| **s == Some(n))
            .map(|(u, _)| u)
    }

    /// Checks C1–C3. C1 holds structurally (one optional subcarrier per
    /// user); C2 caps each subcarrier at two users; C3 bounds the power.
    pub fn validate(&self, radio: &RadioConfig) -> Result<()> {
        if self.power_w.len() != self.subcarrier.len() {
            return Err(Error::Constraint("power and subcarrier vectors differ in length".into()));
        }
        let mut load = vec![0usize; radio.subcarriers];
        for (u, (&sc, &p)) in self.subcarrier.iter().zip(&self.power_w).enumerate() {
            match sc {
                None if p != 0.0 => {
                    return Err(Error::Constraint(format!("idle user {u} has power {p} W")));
                }
                None => {}
                Some(n) => {
                    if n >= radio.subcarriers {
                        return Err(Error::Constraint(format!(
                            "user {u} on subcarrier {n}, only {} exist",
                            radio.subcarriers
                        )));
                    }
                    load[n] += 1;
                    if load[n] > 2 {
                        return Err(Error::Constraint(format!("subcarrier {n} carries more than 2 users")));
                    }
                    if !(p >= 0.0 && p <= radio.p_max_w) {
                        return Err(Error::Constraint(format!(
                            "user {u} power {p} W outside [0, {}]",
                            radio.p_max_w
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Users sharing subcarrier `n`, weakest gain first; equal gains keep index order.
pub fn decoding_order(assignment: &SlotAssignment, gains: &GainMatrix, n: usize) -> Vec<usize> {
    let mut users: Vec<usize> = assignment.occupants(n).collect();
    users.sort_by(|&a, &b| gains.get(a, n).total_cmp(&gains.get(b, n)).then(a.cmp(&b)));
    users
}

/// Bits user `u` delivers in one slot on subcarrier `n`:
/// `B log2(1 + p_u g_u / (sigma + sum_{i after u} p_i g_i))`.
pub fn subcarrier_rate(
    u: usize,
    n: usize,
    assignment: &SlotAssignment,
    gains: &GainMatrix,
    radio: &RadioConfig,
) -> Result<f64> {
    if assignment.subcarrier.get(u).copied().flatten() != Some(n) {
        return Err(Error::Contract(format!("user {u} is not assigned to subcarrier {n}")));
    }
    let order = decoding_order(assignment, gains, n);
    let pos = order.iter().position(|&v| v == u).expect("u is an occupant");
    let interference: f64 = order[pos + 1..]
        .iter()
        .map(|&i| assignment.power_w[i] * gains.get(i, n))
        .sum();
    let signal = assignment.power_w[u] * gains.get(u, n);
    Ok(radio.bandwidth_hz * (1.0 + signal / (radio.noise_w + interference)).log2())
}

/// Per-user bits for the slot; idle users deliver nothing.
pub fn slot_rates(assignment: &SlotAssignment, gains: &GainMatrix, radio: &RadioConfig) -> Result<Vec<f64>> {
    assignment.validate(radio)?;
    assignment
        .subcarrier
        .iter()
        .enumerate()
        .map(|(u, sc)| match sc {
            None => Ok(0.0),
            Some(n) => subcarrier_rate(u, *n, assignment, gains, radio),
        })
        .collect()
}

//! Experiment configuration: a TOML document with one table per component.
//!
//! Every key is optional; missing keys take the full-scale defaults. Any key
//! can be overridden through the environment as
//! `AOISCHED_<SECTION>__<KEY>=<toml value>`, e.g.
//! `AOISCHED_PPO__LEARNING_RATE=3e-4`.

use std::path::{Path, PathBuf};

use aoi_core::channel::RadioConfig;
use aoi_core::env::{build_profiles, EnvConfig, UserProfile, MEGABIT};
use aoi_core::nets::{NetConfig, NetKind};
use aoi_core::ppo::{PpoConfig, ValueTarget};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

pub const ENV_PREFIX: &str = "AOISCHED_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyName {
    Transformer,
    Mlp,
    Random,
    RoundRobin,
    Greedy,
    /// Exhaustive one-slot search every slot (tiny configurations only).
    Oracle,
}

impl PolicyName {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyName::Transformer => "transformer",
            PolicyName::Mlp => "mlp",
            PolicyName::Random => "random",
            PolicyName::RoundRobin => "round-robin",
            PolicyName::Greedy => "greedy",
            PolicyName::Oracle => "oracle",
        }
    }

    pub fn net_kind(self) -> Option<NetKind> {
        match self {
            PolicyName::Transformer => Some(NetKind::Transformer),
            PolicyName::Mlp => Some(NetKind::Mlp),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub seed: u64,
    pub out: PathBuf,
    pub policy: PolicyName,
    /// Fractions of the episode budget at which attention is snapshotted.
    pub snapshot_fractions: Vec<f64>,
    pub eval_episodes: usize,
    /// Moving-average window for `plot-data`.
    pub smoothing_window: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            seed: 0,
            out: PathBuf::from("runs/default"),
            policy: PolicyName::Transformer,
            snapshot_fractions: aoi_core::ppo::DEFAULT_SNAPSHOT_FRACTIONS.to_vec(),
            eval_episodes: 10,
            smoothing_window: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub users: usize,
    pub horizon: usize,
    pub a_max: f64,
    pub lambda: f64,
    pub max_tasks: u32,
    /// Per-user overrides of the arithmetic-sequence profiles.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aoi_thresholds: Option<Vec<u32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub penalty_weights: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task_mbits: Option<Vec<f64>>,
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection {
            users: 20,
            horizon: 200,
            a_max: 50.0,
            lambda: 0.1,
            max_tasks: 3,
            aoi_thresholds: None,
            penalty_weights: None,
            task_mbits: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioSection {
    pub subcarriers: usize,
    /// Split evenly over the subcarriers.
    pub total_bandwidth_hz: f64,
    pub noise_w: f64,
    pub p_max_w: f64,
    pub power_levels_w: Vec<f64>,
    pub fading_mean: f64,
}

impl Default for RadioSection {
    fn default() -> Self {
        let r = RadioConfig::default();
        RadioSection {
            subcarriers: r.subcarriers,
            total_bandwidth_hz: r.bandwidth_hz * r.subcarriers as f64,
            noise_w: r.noise_w,
            p_max_w: r.p_max_w,
            power_levels_w: r.power_levels_w,
            fading_mean: r.fading_mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    /// Feed-forward width; `4 * d_model` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_ff: Option<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            d_model: 256,
            heads: 8,
            layers: 3,
            d_ff: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValueTargetName {
    GaeReturn,
    Reward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoSection {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub c1: f64,
    pub c2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub learning_rate: f64,
    pub episodes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_grad_norm: Option<f64>,
    pub value_target: ValueTargetName,
}

impl Default for PpoSection {
    fn default() -> Self {
        let p = PpoConfig::default();
        PpoSection {
            gamma: p.gamma,
            gae_lambda: p.gae_lambda,
            clip_eps: p.clip_eps,
            c1: p.c1,
            c2: p.c2,
            epochs: p.epochs,
            batch_size: p.batch_size,
            buffer_capacity: p.buffer_capacity,
            learning_rate: p.learning_rate,
            episodes: p.episodes,
            max_grad_norm: p.max_grad_norm,
            value_target: ValueTargetName::GaeReturn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub env: EnvSection,
    pub radio: RadioSection,
    pub model: ModelSection,
    pub ppo: PpoSection,
}

fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

impl ExperimentConfig {
    /// Parses `text`, applies environment overrides from `vars` and validates.
    pub fn from_toml_with_env<I>(text: &str, vars: I) -> Result<Self, HarnessError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table: toml::Table = text.parse().map_err(|e| config_err(format!("parse error: {e}")))?;
        apply_overrides(&mut table, vars)?;
        let cfg: ExperimentConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| config_err(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        Self::from_toml_with_env(text, std::iter::empty())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_toml()).map_err(|e| HarnessError::io(path, e))
    }

    /// Checks every component's invariants, naming the offending key.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let r = &self.radio;
        if r.subcarriers == 0 {
            return Err(config_err("radio.subcarriers must be at least 1"));
        }
        if !(r.total_bandwidth_hz > 0.0 && r.total_bandwidth_hz.is_finite()) {
            return Err(config_err(format!(
                "radio.total_bandwidth_hz must be > 0, got {}",
                r.total_bandwidth_hz
            )));
        }
        let env = self.env_config()?;
        env.validate().map_err(|e| config_err(e.to_string()))?;
        if let Some(kind) = self.experiment.policy.net_kind() {
            self.net_config(kind).validate().map_err(|e| config_err(e.to_string()))?;
        } else {
            self.net_config(NetKind::Transformer)
                .validate()
                .map_err(|e| config_err(e.to_string()))?;
        }
        self.ppo_config().validate().map_err(|e| config_err(e.to_string()))?;
        let x = &self.experiment;
        if x.seed > i64::MAX as u64 {
            return Err(config_err(format!("experiment.seed must be at most {}", i64::MAX)));
        }
        if x.snapshot_fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(config_err("experiment.snapshot_fractions must lie in [0, 1]"));
        }
        if x.eval_episodes == 0 {
            return Err(config_err("experiment.eval_episodes must be at least 1"));
        }
        if x.smoothing_window == 0 {
            return Err(config_err("experiment.smoothing_window must be at least 1"));
        }
        Ok(())
    }

    pub fn radio_config(&self) -> RadioConfig {
        let r = &self.radio;
        RadioConfig {
            subcarriers: r.subcarriers,
            bandwidth_hz: r.total_bandwidth_hz / r.subcarriers.max(1) as f64,
            noise_w: r.noise_w,
            p_max_w: r.p_max_w,
            power_levels_w: r.power_levels_w.clone(),
            fading_mean: r.fading_mean,
        }
    }

    pub fn env_config(&self) -> Result<EnvConfig, HarnessError> {
        let e = &self.env;
        let users = e.users;
        let check_len = |key: &str, len: Option<usize>| match len {
            Some(l) if l != users => Err(config_err(format!("env.{key} has {l} entries for {users} users"))),
            _ => Ok(()),
        };
        check_len("aoi_thresholds", e.aoi_thresholds.as_ref().map(Vec::len))?;
        check_len("penalty_weights", e.penalty_weights.as_ref().map(Vec::len))?;
        check_len("task_mbits", e.task_mbits.as_ref().map(Vec::len))?;

        let profiles: Vec<UserProfile> = if e.penalty_weights.is_some() {
            // Defaults for the remaining fields without the weight check.
            (0..users)
                .map(|u| UserProfile {
                    aoi_threshold: 15 + u as u32,
                    penalty_weight: 0.0,
                    task_bits: (1.0 + 0.25 * u as f64) * MEGABIT,
                })
                .collect()
        } else {
            build_profiles(users).map_err(|err| config_err(err.to_string()))?
        };
        let profiles = profiles
            .into_iter()
            .enumerate()
            .map(|(u, mut p)| {
                if let Some(t) = &e.aoi_thresholds {
                    p.aoi_threshold = t[u];
                }
                if let Some(w) = &e.penalty_weights {
                    p.penalty_weight = w[u];
                }
                if let Some(l) = &e.task_mbits {
                    p.task_bits = l[u] * MEGABIT;
                }
                p
            })
            .collect();
        Ok(EnvConfig {
            radio: self.radio_config(),
            profiles,
            a_max: e.a_max,
            lambda: e.lambda,
            horizon: e.horizon,
            max_tasks: e.max_tasks,
        })
    }

    pub fn net_config(&self, kind: NetKind) -> NetConfig {
        let m = &self.model;
        NetConfig {
            kind,
            d_in: 3 + self.radio.subcarriers,
            d_model: m.d_model,
            n_heads: m.heads,
            n_layers: m.layers,
            d_ff: m.d_ff.unwrap_or(4 * m.d_model),
            n_channel_actions: self.radio.subcarriers + 1,
            n_power_actions: self.radio.power_levels_w.len(),
            max_users: self.env.users,
        }
    }

    pub fn ppo_config(&self) -> PpoConfig {
        let p = &self.ppo;
        PpoConfig {
            gamma: p.gamma,
            gae_lambda: p.gae_lambda,
            clip_eps: p.clip_eps,
            c1: p.c1,
            c2: p.c2,
            epochs: p.epochs,
            batch_size: p.batch_size,
            buffer_capacity: p.buffer_capacity,
            learning_rate: p.learning_rate,
            episodes: p.episodes,
            max_grad_norm: p.max_grad_norm,
            value_target: match p.value_target {
                ValueTargetName::GaeReturn => ValueTarget::GaeReturn,
                ValueTargetName::Reward => ValueTarget::Reward,
            },
        }
    }
}

/// Reads and validates a config file, applying `AOISCHED_*` variables from
/// the process environment.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
    ExperimentConfig::from_toml_with_env(&text, std::env::vars())
        .map_err(|e| match e {
            HarnessError::Config(m) => config_err(format!("{}: {m}", path.display())),
            other => other,
        })
}

fn apply_overrides<I>(table: &mut toml::Table, vars: I) -> Result<(), HarnessError>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut vars: Vec<(String, String)> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    vars.sort();
    for (name, raw) in vars {
        let path = &name[ENV_PREFIX.len()..];
        let Some((section, key)) = path.split_once("__") else {
            return Err(config_err(format!("{name}: expected {ENV_PREFIX}<SECTION>__<KEY>")));
        };
        let (section, key) = (section.to_ascii_lowercase(), key.to_ascii_lowercase());
        let value = parse_override(&raw);
        let entry = table
            .entry(section.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        match entry {
            toml::Value::Table(t) => {
                t.insert(key, value);
            }
            _ => return Err(config_err(format!("{name}: {section} is not a table"))),
        }
    }
    Ok(())
}

/// Interprets an override as a TOML value, falling back to a bare string.
fn parse_override(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

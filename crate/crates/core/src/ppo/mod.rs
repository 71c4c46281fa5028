//! Proximal policy optimisation with GAE.

mod buffer;
mod config;
mod gae;
mod loss;
mod trainer;

pub use buffer::RolloutBuffer;
pub use config::{PpoConfig, ValueTarget};
pub use gae::{compute_gae, Advantages};
pub use loss::{clip_objective, normalize, total_loss, value_targets, LossStats, LossVars, Minibatch};
pub use trainer::{
    collect_rollouts, snapshot_episodes, train, update, AttentionSnapshot, Collector, EpisodeMetrics,
    FinishedEpisode, Recorder, SeedPlan, TrainObserver, TrainOptions, TrainOutcome, DEFAULT_SNAPSHOT_FRACTIONS,
};

#[cfg(test)]
mod tests;

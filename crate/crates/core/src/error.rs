use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    /// An assignment broke C1 (one subcarrier per user), C2 (at most two
    /// users per subcarrier) or C3 (power budget).
    #[error("constraint violation: {0}")]
    Constraint(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("search space too large: {count} feasible joint actions exceed the limit of {limit}")]
    TooLarge { count: u128, limit: u128 },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("checkpoint: {0}")]
    Checkpoint(#[from] aoi_autograd::checkpoint::CheckpointError),

    /// Raised by training observers (file sinks and the like).
    #[error("observer: {0}")]
    Observer(String),

    #[error(transparent)]
    Tensor(#[from] aoi_autograd::TensorError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

//! Minimal dense-tensor engine used by the scheduler networks.
//!
//! Everything is `f64` and row-major. A [`Tape`] records operations as they
//! are evaluated and replays them backwards to produce gradients, which are
//! accumulated into the [`Parameter`]s of a [`ParamStore`]. [`Adam`] updates
//! the parameters, and [`checkpoint`] persists them in a portable binary
//! container.

mod adam;
pub mod checkpoint;
mod error;
mod gradcheck;
mod kernels;
mod param;
mod tape;
mod tensor;

pub use adam::Adam;
pub use error::TensorError;
pub use gradcheck::finite_diff_check;
pub use kernels::{log_softmax_row, softmax_row};
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{layer_norm, matmul, relu, softmax_rows, Tensor};

/// Additive logit offset used to mask infeasible actions before a softmax.
pub const MASK_LOGIT: f64 = -1e9;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

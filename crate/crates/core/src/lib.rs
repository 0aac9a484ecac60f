//! Training-free token merging for a small transformer encoder, evaluated
//! end to end through an AWGN channel, with Gaussian-process multi-objective
//! Bayesian optimization of per-layer merge schedules (accuracy vs. FLOPs).

pub mod channel;
pub mod container;
pub mod encoder;
pub mod error;
pub mod flops;
pub mod gp;
pub mod merging;
pub mod mobo;
pub mod seeds;
pub mod task;
pub mod tensor;

pub use encoder::{encode, Image, ModelDims, ModelWeights, TokenMatrix};
pub use error::{Error, Result};
pub use merging::{MergeAssignment, MergeSchedule};
pub use task::{EvalResult, Evaluator};

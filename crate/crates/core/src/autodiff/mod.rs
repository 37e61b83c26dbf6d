//! Rank-4 tensors with reverse-mode differentiation, the weighted
//! cross-entropy loss, SGD and checkpointing.

mod checkpoint;
mod graph;
mod init;
mod kernels;
mod loss;
mod optim;
mod params;
mod scalar;
mod tensor;

pub use checkpoint::{
    decode_state, decode_weights, encode_state, encode_weights, load_state, load_weights_into, save_state,
    save_weights, STATE_MAGIC, WEIGHTS_MAGIC,
};
pub use graph::{BatchStats, BnMode, Graph, Var};
pub use init::kaiming_init;
pub(crate) use init::kaiming_with_rng;
pub use loss::ClassWeights;
pub use optim::{sgd_step, SgdConfig, SgdState};
pub use params::{ModelParams, ParamEntry};
pub use scalar::Real;
pub use tensor::{softmax_channels, Shape, Tensor};

/// Batch-norm epsilon.
pub const BN_EPS: f64 = 1e-5;
/// Weight of the newest batch in running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

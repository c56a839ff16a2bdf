//! The hierarchical-fusion dilated residual network.

pub mod arch;
pub mod checkpoint;
pub mod model;
pub mod params;

pub use arch::NetArch;
pub use checkpoint::Checkpoint;
pub use model::{
    backward, forward, forward_eval, forward_stateless, predict_depth, predict_scores,
    scores_to_depth, ForwardCache, Gradients,
};
pub use params::{init_params, NetParams, ParamKind, ParamTensor};

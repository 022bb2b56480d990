//! The QANA network: Ghost/SA-ECA/residual blocks, spike-compatible head,
//! SE gating and the output projection.

mod config;
mod model;
mod params;
mod spec;

pub use config::{GhostConfig, QanaConfig, HEAD_SIDE, INPUT_CHANNELS, INPUT_SIDE, NUM_BLOCKS};
pub use model::{
    classify, dropout_rng, ghost_forward, init_params, qana_block_forward, sa_eca_forward, se_forward,
    spike_head_forward, QanaModel, Trace,
};
pub use params::{Grads, Param, ParamStore};
pub use spec::{LayerDesc, LayerKind, ModelSpec};

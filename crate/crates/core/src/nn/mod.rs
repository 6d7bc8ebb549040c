//! Model architectures, parameter storage and checkpoints.

pub mod checkpoint;
mod model;
mod params;

pub use checkpoint::{transfer_init, Checkpoint, PrefixMap};
pub use model::{
    Arch, BranchExtractor, Forward, Model, ModelConfig, PolicyNetwork, Prediction, HEAD_INIT_STD,
};
pub use params::{Bound, ParamStore};

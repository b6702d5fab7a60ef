//! Classification and segmentation networks, their configuration, and the
//! training state.

mod config;
mod network;
mod train;

pub use config::{
    format_hierarchies, parse_hierarchies, Hierarchies, LayerSpec, NetworkConfig, Task, CANONICAL_DECODER,
    CANONICAL_ENCODER,
};
pub use network::{argmax, ClsOutput, ForwardOptions, ForwardTrace, Network, SegOutput};
pub use train::{Example, LossRecord, Optimizer, TrainState};

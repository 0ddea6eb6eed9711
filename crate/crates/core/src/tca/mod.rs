//! The temporal channel-aware block and the E3D/E2D counting networks built from it.

mod block;
mod checkpoint;
mod config;
mod network;

pub use block::{channel_gate, tca_backward, tca_forward, GateSaved, TcaBlockParams, TcaSaved};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointHeader};
pub use config::{NetConfig, Variant};
pub use network::{
    build_network, network_backward, network_backward_with_input, network_forward, NetSaved,
    Network,
};

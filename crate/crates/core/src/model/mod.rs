pub mod checkpoint;
pub mod config;
pub mod network;

pub use checkpoint::{hex_digest, Checkpoint};
pub use config::{ModelConfig, Preset, Variant};
pub use network::{argmax, EncoderStream, ForwardCache, ModelOutput, Network};

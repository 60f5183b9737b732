mod checkpoint;
mod config;
mod decode;
mod generate;
mod lora;
mod transformer;

pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use config::ModelConfig;
pub use decode::DecodeState;
pub use generate::{generate, DecodeMode, Generation, GREEDY_TAU};
pub use lora::{lora_apply, LoraAdapter, LoraPair, LORA_TARGETS};
pub use transformer::{attention, Forward, Trainable, Transformer};

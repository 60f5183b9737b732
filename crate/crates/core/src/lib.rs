//! Multi-specialist molecular reasoning model: tokenizer, transformer with
//! LoRA specialists, rewards, three-stage training, dataset construction and
//! analysis.

pub mod analysis;
pub mod data;
pub mod demo;
pub mod error;
pub mod model;
pub mod rewards;
pub mod specialist;
pub mod tokenizer;
pub mod training;

pub use error::{CoreError, Result};

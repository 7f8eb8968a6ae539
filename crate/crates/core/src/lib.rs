//! Decoder-only transformer engine with prompt-aware representation
//! adjustment (PARA), LoRA and (IA)³ adapters, adapter-only training, KV-cache
//! generation and a multi-tenant serving benchmark.

pub mod backbone;
pub mod cli;
pub mod clock;
pub mod config;
pub mod format;
pub mod peft;
pub mod serving;
pub mod tensor;
pub mod training;

pub use backbone::{Model, ModelError, Session, TokenId};
pub use config::ModelConfig;
pub use peft::{AdapterSet, Method};
pub use tensor::{Matrix, Precision, Scalar};

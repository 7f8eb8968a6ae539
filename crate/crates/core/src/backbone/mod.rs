//! Frozen LLaMA-style decoder: pre-norm RMS normalization, multi-head causal
//! attention with rotary positions, gated FFN, KV-cache sessions and
//! beam-search generation.

mod cache;
mod generate;
mod layer;
mod sequence;
mod session;
mod weights;

pub use cache::{KvCache, LayerCache};
pub use generate::{
    beam_search, generate, generate_uncached, BeamStepper, CachedStepper, Generation, UncachedStepper,
};
pub use layer::{
    apply_rope, apply_rope_inverse, attention_forward, ffn_forward, rms_norm, rms_norm_with_stats,
    sinusoidal_row, RopeTable,
};
pub use sequence::{forward_sequence, LayerTape, SequenceOutput, Tape, VgTape};
pub use session::Session;
pub use weights::{BackboneWeights, LayerWeights};

use thiserror::Error;

use crate::config::ModelConfig;
use crate::peft::AdapterError;
use crate::tensor::{Rng, Scalar, TensorError};

pub type TokenId = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("KV cache overflow: {needed} positions needed, max_seq_len is {max}")]
    CacheOverflow { needed: usize, max: usize },
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("token {token} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { token: TokenId, vocab: usize },
    #[error("session has not been prefilled")]
    NotPrefilled,
    #[error("session was already prefilled")]
    AlreadyPrefilled,
    #[error("beam size must be at least 1")]
    InvalidBeam,
    #[error("weight `{name}` has shape {found:?}, expected {expected:?}")]
    WeightShape {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Backbone configuration plus frozen weights. Immutable after construction
/// and shared between sessions through `Arc`.
#[derive(Debug, Clone)]
pub struct Model<T> {
    config: ModelConfig,
    weights: BackboneWeights<T>,
    rope: RopeTable<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, weights: BackboneWeights<T>) -> Result<Self, ModelError> {
        config.validate().map_err(ModelError::InvalidConfig)?;
        weights.check_shapes(&config)?;
        let rope = RopeTable::new(&config);
        Ok(Model { config, weights, rope })
    }

    /// Randomly initialized backbone.
    pub fn random(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate().map_err(ModelError::InvalidConfig)?;
        let weights = BackboneWeights::init(&config, &mut Rng::new(seed));
        Self::new(config, weights)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &BackboneWeights<T> {
        &self.weights
    }

    pub(crate) fn rope(&self) -> &RopeTable<T> {
        &self.rope
    }

    pub fn into_weights(self) -> BackboneWeights<T> {
        self.weights
    }

    /// Mutable weights; only backbone pretraining writes through this.
    pub(crate) fn weights_mut(&mut self) -> &mut BackboneWeights<T> {
        &mut self.weights
    }

    pub(crate) fn check_tokens(&self, tokens: &[TokenId]) -> Result<(), ModelError> {
        for &t in tokens {
            if t as usize >= self.config.vocab_size {
                return Err(ModelError::TokenOutOfRange {
                    token: t,
                    vocab: self.config.vocab_size,
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;

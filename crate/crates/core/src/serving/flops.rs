use serde::Serialize;

use crate::config::ModelConfig;
use crate::peft::{AdapterHyper, Method};

/// Closed-form FLOP counts for one decode step. Multiplies and adds each
/// count as one FLOP; the elementwise scalings count one multiply per element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FlopEstimate {
    pub method: Method,
    /// Adapter cost per layer per generated token.
    pub overhead_per_layer: u64,
    pub overhead_per_token: u64,
    /// Backbone cost per token at the given context length.
    pub base_per_token: u64,
    pub total_per_token: u64,
    /// One-off vector-generator cost paid at prefill (PARA only).
    pub prefill_generator: u64,
}

/// Per-token decode FLOPs for `method` with a context of `context_len` tokens.
pub fn flop_model(config: &ModelConfig, method: Method, hyper: &AdapterHyper, context_len: usize) -> FlopEstimate {
    let n = config.n_layers as u64;
    let d = config.d_model as u64;
    let f = config.d_ffn as u64;
    let v = config.vocab_size as u64;
    let ctx = context_len as u64;

    // Q, K, V, O projections, gated FFN, scores and weighted values.
    let per_layer = 2 * (4 * d * d + 3 * d * f) + 4 * ctx * d;
    let base_per_token = n * per_layer + 2 * d * v;

    let (overhead_per_layer, prefill_generator) = match method {
        Method::None => (0, 0),
        Method::Para => {
            let r = hyper.para.r as u64;
            (2 * d + f, n * 2 * (d * r + r * (2 * d + f)))
        }
        Method::Ia3 => (2 * d + f, 0),
        Method::Lora => {
            let mut targets = hyper.lora.targets.clone();
            targets.sort();
            targets.dedup();
            let rank = hyper.lora.rank as u64;
            let cost = targets
                .iter()
                .map(|p| {
                    let (i, o) = p.dims(config);
                    2 * rank * (i + o) as u64
                })
                .sum();
            (cost, 0)
        }
    };
    let overhead_per_token = n * overhead_per_layer;
    FlopEstimate {
        method,
        overhead_per_layer,
        overhead_per_token,
        base_per_token,
        total_per_token: base_per_token + overhead_per_token,
        prefill_generator,
    }
}

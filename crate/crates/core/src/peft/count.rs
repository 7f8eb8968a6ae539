use serde::Serialize;

use crate::config::ModelConfig;

use super::{AdapterError, AdapterHyper, Method};

/// Tunable-parameter totals for one adapter configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub method: Method,
    /// Weight matrices and vectors, excluding the generator bias `b_up`.
    pub headline: u64,
    /// Everything that is trained, including biases.
    pub with_bias: u64,
}

/// Closed-form parameter count. For PARA the headline figure is
/// `n_layers · (d_model·r + r·(2·d_model + d_ffn))`.
pub fn count_params(
    config: &ModelConfig,
    method: Method,
    hyper: &AdapterHyper,
) -> Result<ParamCount, AdapterError> {
    hyper.validate(method)?;
    let n = config.n_layers as u64;
    let d = config.d_model as u64;
    let f = config.d_ffn as u64;
    let (headline, bias) = match method {
        Method::None => (0, 0),
        Method::Para => {
            let r = hyper.para.r as u64;
            let d_out = 2 * d + f;
            (n * (d * r + r * d_out), n * d_out)
        }
        Method::Lora => {
            let mut targets = hyper.lora.targets.clone();
            targets.sort();
            targets.dedup();
            let rank = hyper.lora.rank as u64;
            let per_layer: u64 = targets
                .iter()
                .map(|p| {
                    let (i, o) = p.dims(config);
                    rank * (i + o) as u64
                })
                .sum();
            (n * per_layer, 0)
        }
        Method::Ia3 => (n * (2 * d + f), 0),
    };
    Ok(ParamCount {
        method,
        headline,
        with_bias: headline + bias,
    })
}

//! Backbone weight file.
//!
//! Payload layout:
//!
//! ```text
//! scalar_bytes      u8   (4 or 8)
//! n_layers          u32
//! d_model           u32
//! d_ffn             u32
//! n_heads           u32
//! vocab_size        u32
//! max_seq_len       u32
//! ffn_activation    u8   (0 silu, 1 gelu, 2 relu)
//! positional        u8   (0 rope, 1 sinusoidal)
//! rope_theta        f64
//! norm_eps          f64
//! n_tensors         u32
//! tensors           n_tensors records, in BackboneWeights::named order
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneWeights, Model};
use crate::config::{ModelConfig, Positional};
use crate::tensor::{Activation, Precision, Scalar};

use super::codec::{frame, unframe, Reader, Writer};
use super::{read_file, write_with_sidecar, FormatError};

pub const WEIGHTS_MAGIC: [u8; 8] = *b"PARAWGT\0";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsSidecar {
    pub format_version: u32,
    pub precision: Precision,
    pub config: ModelConfig,
    pub config_fingerprint: String,
    pub param_count: usize,
    pub tensors: Vec<(String, (usize, usize))>,
}

impl WeightsSidecar {
    pub fn describe<T: Scalar>(model: &Model<T>) -> Self {
        WeightsSidecar {
            format_version: WEIGHTS_VERSION,
            precision: T::PRECISION,
            config: *model.config(),
            config_fingerprint: format!("{:016x}", model.config().fingerprint()),
            param_count: model.weights().param_count(),
            tensors: BackboneWeights::<T>::expected_shapes(model.config()),
        }
    }
}

pub fn serialize_model<T: Scalar>(model: &Model<T>) -> Vec<u8> {
    let c = model.config();
    let mut w = Writer::default();
    w.u8(T::BYTES as u8);
    for v in [c.n_layers, c.d_model, c.d_ffn, c.n_heads, c.vocab_size, c.max_seq_len] {
        w.u32(v);
    }
    w.u8(c.ffn_activation.tag());
    w.u8(c.positional.tag());
    w.f64(c.rope_theta);
    w.f64(c.norm_eps);
    let named = model.weights().named();
    w.u32(named.len());
    for (name, m) in named {
        w.tensor(&name, m);
    }
    frame(&WEIGHTS_MAGIC, WEIGHTS_VERSION, &w.buf)
}

pub fn deserialize_model<T: Scalar>(bytes: &[u8]) -> Result<Model<T>, FormatError> {
    let payload = unframe(bytes, &WEIGHTS_MAGIC, WEIGHTS_VERSION)?;
    let mut r = Reader::new(payload);
    r.precision::<T>()?;
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = r.u32()?;
    }
    let act = r.u8()?;
    let pos = r.u8()?;
    let config = ModelConfig {
        n_layers: dims[0],
        d_model: dims[1],
        d_ffn: dims[2],
        n_heads: dims[3],
        vocab_size: dims[4],
        max_seq_len: dims[5],
        ffn_activation: Activation::from_tag(act).ok_or_else(|| FormatError::InvalidField {
            field: "ffn_activation",
            detail: act.to_string(),
        })?,
        positional: Positional::from_tag(pos).ok_or_else(|| FormatError::InvalidField {
            field: "positional",
            detail: pos.to_string(),
        })?,
        rope_theta: r.f64()?,
        norm_eps: r.f64()?,
    };
    config
        .validate()
        .map_err(|detail| FormatError::InvalidField { field: "config", detail })?;
    let shapes = BackboneWeights::<T>::expected_shapes(&config);
    let n = r.u32()?;
    if n != shapes.len() {
        return Err(FormatError::TensorCount { expected: shapes.len(), found: n });
    }
    let mut weights = BackboneWeights::<T>::zeros(&config);
    for (i, ((name, shape), (_, slot))) in shapes.iter().zip(weights.named_mut()).enumerate() {
        *slot = r.tensor(i, name, *shape)?;
    }
    r.finish()?;
    Model::new(config, weights).map_err(|e| FormatError::InvalidField {
        field: "weights",
        detail: e.to_string(),
    })
}

/// Writes the weight file and its JSON sidecar.
pub fn save_model<T: Scalar>(path: &Path, model: &Model<T>) -> Result<(), FormatError> {
    write_with_sidecar(path, &serialize_model(model), &WeightsSidecar::describe(model))
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<Model<T>, FormatError> {
    deserialize_model(&read_file(path)?)
}

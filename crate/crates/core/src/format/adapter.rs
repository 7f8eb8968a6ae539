//! Adapter file.
//!
//! Payload layout:
//!
//! ```text
//! method            u8   (0 none, 1 para, 2 lora, 3 ia3)
//! scalar_bytes      u8   (4 or 8)
//! n_layers          u32
//! d_model           u32
//! d_ffn             u32
//! method block:
//!   para            r u32, activation u8, split order 3 bytes "qvu"
//!   lora            rank u32, alpha f64, target mask u8 (bit i = projection i
//!                   in q, k, v, o, gate, up, down order)
//!   ia3, none       empty
//! metadata          u32 length + JSON of AdapterMeta
//! n_tensors         u32
//! tensors           n_tensors records, in AdapterSet::blocks order
//! ```
//!
//! For PARA each layer stores `w_down (d_model × r)`, `w_up (r × d_out)` and
//! `b_up (1 × d_out)`, where the `d_out` columns are `l_q`, then `l_v`, then `l_u`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::peft::{
    count_params, AdapterDims, AdapterHyper, AdapterMeta, AdapterParams, AdapterSet, LoraHyper,
    Method, ParaHyper, Projection,
};
use crate::tensor::{Activation, Precision, Scalar};

use super::codec::{frame, unframe, Reader, Writer};
use super::{read_file, write_with_sidecar, FormatError};

pub const ADAPTER_MAGIC: [u8; 8] = *b"PARAADP\0";
pub const ADAPTER_VERSION: u32 = 1;

const SPLIT_ORDER: &[u8; 3] = b"qvu";
/// Upper bound on any single dimension accepted from a file.
const MAX_DIM: usize = 1 << 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterSidecar {
    pub format_version: u32,
    pub method: Method,
    pub precision: Precision,
    pub dims: AdapterDims,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub para: Option<ParaSidecar>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lora: Option<LoraSidecar>,
    pub meta: AdapterMeta,
    pub param_count: usize,
    pub tensors: Vec<(String, (usize, usize))>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParaSidecar {
    pub r: usize,
    pub activation: Activation,
    pub split_order: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraSidecar {
    pub rank: usize,
    pub alpha: f64,
    pub targets: Vec<Projection>,
}

impl AdapterSidecar {
    pub fn describe<T: Scalar>(set: &AdapterSet<T>) -> Self {
        let para = set.generator(0).map(|g| ParaSidecar {
            r: g.r(),
            activation: g.activation,
            split_order: ["l_q", "l_v", "l_u"].map(String::from).to_vec(),
        });
        let lora = match &set.params {
            AdapterParams::Lora { rank, alpha, targets, .. } => Some(LoraSidecar {
                rank: *rank,
                alpha: *alpha,
                targets: targets.clone(),
            }),
            _ => None,
        };
        AdapterSidecar {
            format_version: ADAPTER_VERSION,
            method: set.method(),
            precision: T::PRECISION,
            dims: set.dims,
            para,
            lora,
            meta: set.meta.clone(),
            param_count: set.param_count(),
            tensors: set
                .blocks()
                .iter()
                .map(|b| (b.name.clone(), b.value.shape()))
                .collect(),
        }
    }
}

pub fn serialize_adapter<T: Scalar>(set: &AdapterSet<T>) -> Vec<u8> {
    let mut w = Writer::default();
    w.u8(set.method().tag());
    w.u8(T::BYTES as u8);
    w.u32(set.dims.n_layers);
    w.u32(set.dims.d_model);
    w.u32(set.dims.d_ffn);
    match &set.params {
        AdapterParams::Para(gens) => {
            w.u32(gens.first().map_or(0, |g| g.r()));
            w.u8(gens.first().map_or(Activation::Gelu, |g| g.activation).tag());
            w.buf.extend_from_slice(SPLIT_ORDER);
        }
        AdapterParams::Lora { rank, alpha, targets, .. } => {
            w.u32(*rank);
            w.f64(*alpha);
            w.u8(targets.iter().fold(0, |m, p| m | p.bit()));
        }
        AdapterParams::None | AdapterParams::Ia3(_) => {}
    }
    w.bytes32(&serde_json::to_vec(&set.meta).expect("metadata serializes"));
    let blocks = set.blocks();
    w.u32(blocks.len());
    for b in &blocks {
        w.tensor(&b.name, b.value);
    }
    frame(&ADAPTER_MAGIC, ADAPTER_VERSION, &w.buf)
}

fn dim(r: &mut Reader<'_>, field: &'static str) -> Result<usize, FormatError> {
    let v = r.u32()?;
    if v == 0 || v > MAX_DIM {
        return Err(FormatError::InvalidField { field, detail: v.to_string() });
    }
    Ok(v)
}

pub fn deserialize_adapter<T: Scalar>(bytes: &[u8]) -> Result<AdapterSet<T>, FormatError> {
    let payload = unframe(bytes, &ADAPTER_MAGIC, ADAPTER_VERSION)?;
    let mut r = Reader::new(payload);
    let tag = r.u8()?;
    let method = Method::from_tag(tag).ok_or(FormatError::MethodTag(tag))?;
    r.precision::<T>()?;
    let dims = AdapterDims {
        n_layers: dim(&mut r, "n_layers")?,
        d_model: dim(&mut r, "d_model")?,
        d_ffn: dim(&mut r, "d_ffn")?,
    };
    let mut hyper = AdapterHyper::default();
    match method {
        Method::Para => {
            let r_dim = dim(&mut r, "r")?;
            let act = r.u8()?;
            let activation = Activation::from_tag(act).ok_or_else(|| FormatError::InvalidField {
                field: "activation",
                detail: act.to_string(),
            })?;
            let order = [r.u8()?, r.u8()?, r.u8()?];
            if &order != SPLIT_ORDER {
                return Err(FormatError::InvalidField {
                    field: "split_order",
                    detail: String::from_utf8_lossy(&order).into_owned(),
                });
            }
            hyper.para = ParaHyper { r: r_dim, activation, ..ParaHyper::default() };
        }
        Method::Lora => {
            let rank = dim(&mut r, "rank")?;
            let alpha = r.f64()?;
            let mask = r.u8()?;
            let targets = Projection::from_mask(mask);
            if targets.is_empty() || mask >> Projection::ALL.len() != 0 || !alpha.is_finite() {
                return Err(FormatError::InvalidField {
                    field: "lora",
                    detail: format!("alpha {alpha}, target mask {mask:#04x}"),
                });
            }
            hyper.lora = LoraHyper { rank, alpha, targets, ..LoraHyper::default() };
        }
        Method::None | Method::Ia3 => {}
    }
    let meta: AdapterMeta = serde_json::from_slice(r.bytes32()?)?;
    let config = ModelConfig {
        n_layers: dims.n_layers,
        d_model: dims.d_model,
        d_ffn: dims.d_ffn,
        ..ModelConfig::desk()
    };
    // Refuse to allocate more than the payload could possibly hold.
    let count = count_params(&config, method, &hyper)
        .map_err(|e| FormatError::InvalidField { field: "hyper", detail: e.to_string() })?;
    let needed = count.with_bias.saturating_mul(T::BYTES as u64);
    if needed > payload.len() as u64 {
        return Err(FormatError::Truncated { needed: needed as usize, have: payload.len() });
    }
    let mut set = AdapterSet::<T>::init(&config, method, &hyper, 0)
        .map_err(|e| FormatError::InvalidField { field: "hyper", detail: e.to_string() })?
        .with_meta(meta);
    let expected: Vec<(String, (usize, usize))> =
        set.blocks().iter().map(|b| (b.name.clone(), b.value.shape())).collect();
    let n = r.u32()?;
    if n != expected.len() {
        return Err(FormatError::TensorCount { expected: expected.len(), found: n });
    }
    for (i, ((name, shape), slot)) in expected.iter().zip(set.blocks_mut()).enumerate() {
        *slot = r.tensor(i, name, *shape)?;
    }
    r.finish()?;
    Ok(set)
}

/// Deserializes and checks the adapter against the model it will serve.
pub fn load_adapter_for<T: Scalar>(
    bytes: &[u8],
    config: &ModelConfig,
) -> Result<AdapterSet<T>, FormatError> {
    let set = deserialize_adapter::<T>(bytes)?;
    for (what, adapter, model) in [
        ("n_layers", set.dims.n_layers, config.n_layers),
        ("d_model", set.dims.d_model, config.d_model),
        ("d_ffn", set.dims.d_ffn, config.d_ffn),
    ] {
        if adapter != model {
            return Err(FormatError::ConfigMismatch { what, adapter, model });
        }
    }
    Ok(set)
}

/// Writes the adapter file and its JSON sidecar.
pub fn save_adapter<T: Scalar>(path: &Path, set: &AdapterSet<T>) -> Result<(), FormatError> {
    write_with_sidecar(path, &serialize_adapter(set), &AdapterSidecar::describe(set))
}

pub fn load_adapter<T: Scalar>(path: &Path) -> Result<AdapterSet<T>, FormatError> {
    deserialize_adapter(&read_file(path)?)
}

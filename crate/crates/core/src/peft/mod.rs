//! Parameter-efficient adapters: prompt-aware vector generators, LoRA and
//! (IA)³, plus parameter accounting.

mod adapter;
mod count;
mod ia3;
mod lora;
mod para;

pub use adapter::{AdapterDims, AdapterMeta, AdapterParams, AdapterSet, Hooks, ParamBlock};
pub use count::{count_params, ParamCount};
pub use ia3::Ia3Layer;
pub use lora::{lora_forward, LoraLayer, LoraParams};
pub use para::{apply_q, apply_u, apply_v, generate_vectors, pooler, AdjustingVectors, VectorGenerator};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ModelConfig;
use crate::tensor::{Activation, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdapterError {
    #[error("adapter {what} mismatch: adapter has {adapter}, model has {model}")]
    DimMismatch {
        what: &'static str,
        adapter: usize,
        model: usize,
    },
    #[error("invalid adapter hyper-parameter: {0}")]
    InvalidHyper(String),
    #[error("unknown adapter method `{0}`")]
    UnknownMethod(String),
    #[error("pooler needs at least one prompt row")]
    EmptyPrompt,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Which adapter family an [`AdapterSet`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    None,
    Para,
    Lora,
    Ia3,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::None, Method::Para, Method::Lora, Method::Ia3];

    pub fn tag(self) -> u8 {
        match self {
            Method::None => 0,
            Method::Para => 1,
            Method::Lora => 2,
            Method::Ia3 => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Method::ALL.into_iter().find(|m| m.tag() == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Para => "para",
            Method::Lora => "lora",
            Method::Ia3 => "ia3",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = AdapterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Method::None),
            "para" => Ok(Method::Para),
            "lora" => Ok(Method::Lora),
            "ia3" | "(ia)3" => Ok(Method::Ia3),
            other => Err(AdapterError::UnknownMethod(other.to_string())),
        }
    }
}

/// A weight matrix of a transformer layer that LoRA can target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Projection {
    Q,
    K,
    V,
    O,
    Gate,
    Up,
    Down,
}

impl Projection {
    pub const ALL: [Projection; 7] = [
        Projection::Q,
        Projection::K,
        Projection::V,
        Projection::O,
        Projection::Gate,
        Projection::Up,
        Projection::Down,
    ];

    /// `(d_in, d_out)` of the projected weight.
    pub fn dims(self, config: &ModelConfig) -> (usize, usize) {
        let (d, f) = (config.d_model, config.d_ffn);
        match self {
            Projection::Q | Projection::K | Projection::V | Projection::O => (d, d),
            Projection::Gate | Projection::Up => (d, f),
            Projection::Down => (f, d),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Projection::Q => "q",
            Projection::K => "k",
            Projection::V => "v",
            Projection::O => "o",
            Projection::Gate => "gate",
            Projection::Up => "up",
            Projection::Down => "down",
        }
    }

    pub fn bit(self) -> u8 {
        1 << (self as u8)
    }

    pub fn from_mask(mask: u8) -> Vec<Projection> {
        Projection::ALL.into_iter().filter(|p| mask & p.bit() != 0).collect()
    }
}

/// Hyper-parameters of the prompt-aware vector generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParaHyper {
    /// Bottleneck width.
    pub r: usize,
    pub activation: Activation,
    /// Standard deviation of the Gaussian used for `W_down`.
    pub init_std: f64,
}

impl Default for ParaHyper {
    fn default() -> Self {
        ParaHyper {
            r: 12,
            activation: Activation::Gelu,
            init_std: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoraHyper {
    pub rank: usize,
    pub alpha: f64,
    pub targets: Vec<Projection>,
    /// Standard deviation of the Gaussian used for `A`.
    pub init_std: f64,
}

impl Default for LoraHyper {
    fn default() -> Self {
        LoraHyper {
            rank: 16,
            alpha: 16.0,
            targets: vec![Projection::Q, Projection::V],
            init_std: 0.02,
        }
    }
}

impl LoraHyper {
    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn target_mask(&self) -> u8 {
        self.targets.iter().fold(0, |m, p| m | p.bit())
    }
}

/// Hyper-parameters for every method; only the one matching the chosen
/// method is consulted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterHyper {
    pub para: ParaHyper,
    pub lora: LoraHyper,
}

impl AdapterHyper {
    pub fn validate(&self, method: Method) -> Result<(), AdapterError> {
        match method {
            Method::Para if self.para.r == 0 => {
                Err(AdapterError::InvalidHyper("vector generator bottleneck r must be >= 1".into()))
            }
            Method::Lora if self.lora.rank == 0 => {
                Err(AdapterError::InvalidHyper("LoRA rank must be >= 1".into()))
            }
            Method::Lora if self.lora.targets.is_empty() => {
                Err(AdapterError::InvalidHyper("LoRA needs at least one target".into()))
            }
            _ => Ok(()),
        }
    }
}

use serde::{Deserialize, Serialize};

use crate::tensor::Activation;

/// Position encoding applied inside attention (rotary) or at the input
/// (sinusoidal).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Positional {
    #[default]
    Rope,
    Sinusoidal,
}

impl Positional {
    pub fn tag(self) -> u8 {
        match self {
            Positional::Rope => 0,
            Positional::Sinusoidal => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Positional::Rope),
            1 => Some(Positional::Sinusoidal),
            _ => None,
        }
    }
}

fn default_rope_theta() -> f64 {
    10_000.0
}

fn default_norm_eps() -> f64 {
    1e-5
}

/// Architecture dimensions of the decoder-only backbone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub d_ffn: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    #[serde(default)]
    pub ffn_activation: Activation,
    #[serde(default)]
    pub positional: Positional,
    #[serde(default = "default_rope_theta")]
    pub rope_theta: f64,
    #[serde(default = "default_norm_eps")]
    pub norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Default small configuration: 2 layers, d_model 64, 4 heads, d_ffn 172.
    pub fn desk() -> Self {
        ModelConfig {
            n_layers: 2,
            d_model: 64,
            d_ffn: 172,
            n_heads: 4,
            vocab_size: 64,
            max_seq_len: 512,
            ffn_activation: Activation::Silu,
            positional: Positional::Rope,
            rope_theta: default_rope_theta(),
            norm_eps: default_norm_eps(),
        }
    }

    /// Benchmark configuration: the desk shape widened to 4 layers of 256.
    pub fn bench() -> Self {
        ModelConfig {
            n_layers: 4,
            d_model: 256,
            d_ffn: 688,
            n_heads: 4,
            ..Self::desk()
        }
    }

    /// LLaMA-2 7B dimensions; only used for parameter and FLOP accounting.
    pub fn llama2_7b() -> Self {
        ModelConfig {
            n_layers: 32,
            d_model: 4096,
            d_ffn: 11008,
            n_heads: 32,
            vocab_size: 32000,
            max_seq_len: 4096,
            ..Self::desk()
        }
    }

    /// Frozen backbone parameters: embeddings, layers, final norm, LM head.
    pub fn backbone_params(&self) -> u64 {
        let (n, d, f, v) = (self.n_layers as u64, self.d_model as u64, self.d_ffn as u64, self.vocab_size as u64);
        2 * v * d + n * (4 * d * d + 3 * d * f + 2 * d) + d
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<(), String> {
        let nonzero = [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("d_ffn", self.d_ffn),
            ("n_heads", self.n_heads),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, v) in nonzero {
            if v == 0 {
                return Err(format!("{name} must be positive"));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(format!(
                "d_model ({}) must be divisible by n_heads ({})",
                self.d_model, self.n_heads
            ));
        }
        if self.positional == Positional::Rope && self.d_head() % 2 != 0 {
            return Err(format!("rotary encoding needs an even head size, got {}", self.d_head()));
        }
        if !(self.norm_eps > 0.0) || !(self.rope_theta > 0.0) {
            return Err("norm_eps and rope_theta must be positive".into());
        }
        Ok(())
    }

    /// Stable 64-bit fingerprint of the configuration (FNV-1a over its JSON).
    pub fn fingerprint(&self) -> u64 {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in json.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backbone_params_match_tensor_shapes() {
        for c in [ModelConfig::desk(), ModelConfig::bench(), ModelConfig::llama2_7b()] {
            let total: u64 = crate::backbone::BackboneWeights::<f32>::expected_shapes(&c)
                .iter()
                .map(|(_, (r, k))| (r * k) as u64)
                .sum();
            assert_eq!(c.backbone_params(), total);
        }
    }

    #[test]
    fn desk_defaults() {
        let c = ModelConfig::desk();
        assert_eq!((c.n_layers, c.d_model, c.n_heads, c.d_ffn, c.vocab_size, c.max_seq_len), (2, 64, 4, 172, 64, 512));
        assert!(c.validate().is_ok());
        assert!(ModelConfig::bench().validate().is_ok());
    }

    #[test]
    fn rejects_indivisible_heads() {
        let c = ModelConfig { n_heads: 5, ..ModelConfig::desk() };
        assert!(c.validate().unwrap_err().contains("divisible"));
    }

    #[test]
    fn json_round_trip_with_defaults() {
        let json = r#"{"n_layers":1,"d_model":8,"d_ffn":16,"n_heads":2,"vocab_size":10,"max_seq_len":32}"#;
        let c: ModelConfig = serde_json::from_str(json).unwrap();
        assert_eq!(c.ffn_activation, Activation::Silu);
        assert_eq!(c.positional, Positional::Rope);
        let back: ModelConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}

use crate::config::ModelConfig;
use crate::tensor::{Matrix, Rng, Scalar};

use super::ModelError;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<T> {
    /// `1 × d_model`
    pub attn_norm: Matrix<T>,
    pub w_q: Matrix<T>,
    pub w_k: Matrix<T>,
    pub w_v: Matrix<T>,
    pub w_o: Matrix<T>,
    /// `1 × d_model`
    pub ffn_norm: Matrix<T>,
    /// `d_model × d_ffn`
    pub w_gate: Matrix<T>,
    /// `d_model × d_ffn`
    pub w_up: Matrix<T>,
    /// `d_ffn × d_model`
    pub w_down: Matrix<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneWeights<T> {
    /// `vocab × d_model`
    pub token_embedding: Matrix<T>,
    pub layers: Vec<LayerWeights<T>>,
    /// `1 × d_model`
    pub final_norm: Matrix<T>,
    /// `d_model × vocab`
    pub lm_head: Matrix<T>,
}

impl<T: Scalar> LayerWeights<T> {
    fn init(c: &ModelConfig, rng: &mut Rng) -> Self {
        let (d, f) = (c.d_model, c.d_ffn);
        let std_d = 1.0 / (d as f64).sqrt();
        let std_f = 1.0 / (f as f64).sqrt();
        let depth = 1.0 / ((2 * c.n_layers) as f64).sqrt();
        LayerWeights {
            attn_norm: Matrix::ones(1, d),
            w_q: Matrix::random_normal(d, d, std_d, rng),
            w_k: Matrix::random_normal(d, d, std_d, rng),
            w_v: Matrix::random_normal(d, d, std_d, rng),
            w_o: Matrix::random_normal(d, d, std_d * depth, rng),
            ffn_norm: Matrix::ones(1, d),
            w_gate: Matrix::random_normal(d, f, std_d, rng),
            w_up: Matrix::random_normal(d, f, std_d, rng),
            w_down: Matrix::random_normal(f, d, std_f * depth, rng),
        }
    }

    /// Tensors in a fixed order with their names.
    pub fn named(&self) -> [(&'static str, &Matrix<T>); 9] {
        [
            ("attn_norm", &self.attn_norm),
            ("w_q", &self.w_q),
            ("w_k", &self.w_k),
            ("w_v", &self.w_v),
            ("w_o", &self.w_o),
            ("ffn_norm", &self.ffn_norm),
            ("w_gate", &self.w_gate),
            ("w_up", &self.w_up),
            ("w_down", &self.w_down),
        ]
    }

    pub fn named_mut(&mut self) -> [(&'static str, &mut Matrix<T>); 9] {
        [
            ("attn_norm", &mut self.attn_norm),
            ("w_q", &mut self.w_q),
            ("w_k", &mut self.w_k),
            ("w_v", &mut self.w_v),
            ("w_o", &mut self.w_o),
            ("ffn_norm", &mut self.ffn_norm),
            ("w_gate", &mut self.w_gate),
            ("w_up", &mut self.w_up),
            ("w_down", &mut self.w_down),
        ]
    }
}

impl<T: Scalar> BackboneWeights<T> {
    pub fn init(c: &ModelConfig, rng: &mut Rng) -> Self {
        BackboneWeights {
            token_embedding: Matrix::random_normal(c.vocab_size, c.d_model, 1.0, rng),
            layers: (0..c.n_layers).map(|_| LayerWeights::init(c, rng)).collect(),
            final_norm: Matrix::ones(1, c.d_model),
            lm_head: Matrix::random_normal(c.d_model, c.vocab_size, 1.0 / (c.d_model as f64).sqrt(), rng),
        }
    }

    /// Zero-filled weights with the shapes `c` requires.
    pub fn zeros(c: &ModelConfig) -> Self {
        let mut w = Self::init(c, &mut Rng::new(0));
        for (_, m) in w.named_mut() {
            m.fill(T::zero());
        }
        w
    }

    pub fn expected_shapes(c: &ModelConfig) -> Vec<(String, (usize, usize))> {
        let (d, f, v) = (c.d_model, c.d_ffn, c.vocab_size);
        let mut out = vec![("token_embedding".to_string(), (v, d))];
        for i in 0..c.n_layers {
            for (name, shape) in [
                ("attn_norm", (1, d)),
                ("w_q", (d, d)),
                ("w_k", (d, d)),
                ("w_v", (d, d)),
                ("w_o", (d, d)),
                ("ffn_norm", (1, d)),
                ("w_gate", (d, f)),
                ("w_up", (d, f)),
                ("w_down", (f, d)),
            ] {
                out.push((format!("layers.{i}.{name}"), shape));
            }
        }
        out.push(("final_norm".to_string(), (1, d)));
        out.push(("lm_head".to_string(), (d, v)));
        out
    }

    /// Every tensor with its serialized name, in file order.
    pub fn named(&self) -> Vec<(String, &Matrix<T>)> {
        let mut out = vec![("token_embedding".to_string(), &self.token_embedding)];
        for (i, l) in self.layers.iter().enumerate() {
            for (name, m) in l.named() {
                out.push((format!("layers.{i}.{name}"), m));
            }
        }
        out.push(("final_norm".to_string(), &self.final_norm));
        out.push(("lm_head".to_string(), &self.lm_head));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Matrix<T>)> {
        let mut out = vec![("token_embedding".to_string(), &mut self.token_embedding)];
        for (i, l) in self.layers.iter_mut().enumerate() {
            for (name, m) in l.named_mut() {
                out.push((format!("layers.{i}.{name}"), m));
            }
        }
        out.push(("final_norm".to_string(), &mut self.final_norm));
        out.push(("lm_head".to_string(), &mut self.lm_head));
        out
    }

    pub fn check_shapes(&self, c: &ModelConfig) -> Result<(), ModelError> {
        if self.layers.len() != c.n_layers {
            return Err(ModelError::InvalidConfig(format!(
                "weights have {} layers, config has {}",
                self.layers.len(),
                c.n_layers
            )));
        }
        for ((name, expected), (_, m)) in Self::expected_shapes(c).into_iter().zip(self.named()) {
            if m.shape() != expected {
                return Err(ModelError::WeightShape {
                    name,
                    expected,
                    found: m.shape(),
                });
            }
        }
        Ok(())
    }

    /// Bitwise equality over every tensor.
    pub fn bit_eq(&self, other: &Self) -> bool {
        let (a, b) = (self.named(), other.named());
        a.len() == b.len() && a.iter().zip(&b).all(|((_, x), (_, y))| x.bit_eq(y))
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, m)| m.len()).sum()
    }
}

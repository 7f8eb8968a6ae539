use crate::config::ModelConfig;
use crate::tensor::{Matrix, Scalar};

/// Static learned scales on keys, values and the FFN intermediate.
#[derive(Debug, Clone, PartialEq)]
pub struct Ia3Layer<T> {
    /// `1 × d_model`
    pub l_k: Matrix<T>,
    /// `1 × d_model`
    pub l_v: Matrix<T>,
    /// `1 × d_ffn`
    pub l_ff: Matrix<T>,
}

impl<T: Scalar> Ia3Layer<T> {
    pub fn init(config: &ModelConfig) -> Self {
        Ia3Layer {
            l_k: Matrix::ones(1, config.d_model),
            l_v: Matrix::ones(1, config.d_model),
            l_ff: Matrix::ones(1, config.d_ffn),
        }
    }
}

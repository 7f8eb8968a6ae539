use crate::config::ModelConfig;
use crate::tensor::{matmul, scale_rows_in_place, Activation, Buffer, Matrix, Rng, Scalar};

use super::{AdapterError, ParaHyper};

/// Per-layer vector generator: pooler, down-projection, activation and
/// up-projection with bias. Its output is split into `(l_q, l_v, l_u)` in
/// that order.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorGenerator<T> {
    /// `d_model × r`
    pub w_down: Matrix<T>,
    /// `r × (2·d_model + d_ffn)`
    pub w_up: Matrix<T>,
    /// `1 × (2·d_model + d_ffn)`
    pub b_up: Matrix<T>,
    pub activation: Activation,
    pub d_model: usize,
    pub d_ffn: usize,
}

/// Scaling vectors produced once per request for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustingVectors<T> {
    pub l_q: Buffer<T>,
    pub l_v: Buffer<T>,
    pub l_u: Buffer<T>,
}

impl<T: Scalar> AdjustingVectors<T> {
    pub fn ones(d_model: usize, d_ffn: usize) -> Self {
        AdjustingVectors {
            l_q: vec![T::one(); d_model].into(),
            l_v: vec![T::one(); d_model].into(),
            l_u: vec![T::one(); d_ffn].into(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.l_q.iter().chain(&self.l_v).chain(&self.l_u).all(|v| v.is_finite())
    }
}

impl<T: Scalar> VectorGenerator<T> {
    /// Fresh generator: `W_down ~ N(0, init_std²)`, `W_up = 0`, `b_up = 1`.
    pub fn init(config: &ModelConfig, hyper: &ParaHyper, rng: &mut Rng) -> Self {
        let d_out = 2 * config.d_model + config.d_ffn;
        VectorGenerator {
            w_down: Matrix::random_normal(config.d_model, hyper.r, hyper.init_std, rng),
            w_up: Matrix::zeros(hyper.r, d_out),
            b_up: Matrix::ones(1, d_out),
            activation: hyper.activation,
            d_model: config.d_model,
            d_ffn: config.d_ffn,
        }
    }

    pub fn r(&self) -> usize {
        self.w_down.cols()
    }

    pub fn d_out(&self) -> usize {
        2 * self.d_model + self.d_ffn
    }

    /// Bottleneck pre-activation and activation for a pooled row; exposed so
    /// the training tape can reuse them.
    pub fn hidden(&self, pooled: &Matrix<T>) -> Result<(Matrix<T>, Matrix<T>), AdapterError> {
        let z = matmul(pooled, &self.w_down)?;
        let a = self.activation.apply_matrix(&z)?;
        Ok((z, a))
    }

    /// Splits a concatenated `1 × d_out` row into the three vectors.
    pub fn split(&self, l: &[T]) -> AdjustingVectors<T> {
        let d = self.d_model;
        AdjustingVectors {
            l_q: l[..d].to_vec().into(),
            l_v: l[d..2 * d].to_vec().into(),
            l_u: l[2 * d..].to_vec().into(),
        }
    }
}

/// Representation of the final prompt position.
pub fn pooler<T: Scalar>(prompt_hidden: &Matrix<T>) -> Result<Matrix<T>, AdapterError> {
    if prompt_hidden.rows() == 0 {
        return Err(AdapterError::EmptyPrompt);
    }
    let last = prompt_hidden.rows() - 1;
    Ok(Matrix::row_vector(prompt_hidden.row(last)))
}

/// `l = g(pooler(h)·W_down)·W_up + b_up`, split into `(l_q, l_v, l_u)`.
pub fn generate_vectors<T: Scalar>(
    vg: &VectorGenerator<T>,
    prompt_hidden: &Matrix<T>,
) -> Result<AdjustingVectors<T>, AdapterError> {
    if prompt_hidden.cols() != vg.d_model {
        return Err(AdapterError::DimMismatch {
            what: "d_model",
            adapter: vg.d_model,
            model: prompt_hidden.cols(),
        });
    }
    let pooled = pooler(prompt_hidden)?;
    let (_, a) = vg.hidden(&pooled)?;
    let mut l = matmul(&a, &vg.w_up)?;
    l.add_assign(&vg.b_up)?;
    Ok(vg.split(l.as_slice()))
}

/// `Q' = l_q ⊙ Q` broadcast over rows.
pub fn apply_q<T: Scalar>(v: &AdjustingVectors<T>, q: &mut Matrix<T>) -> Result<(), AdapterError> {
    Ok(scale_rows_in_place(q, &v.l_q)?)
}

/// `V' = l_v ⊙ V` broadcast over rows.
pub fn apply_v<T: Scalar>(v: &AdjustingVectors<T>, val: &mut Matrix<T>) -> Result<(), AdapterError> {
    Ok(scale_rows_in_place(val, &v.l_v)?)
}

/// `U' = l_u ⊙ U` broadcast over rows.
pub fn apply_u<T: Scalar>(v: &AdjustingVectors<T>, u: &mut Matrix<T>) -> Result<(), AdapterError> {
    Ok(scale_rows_in_place(u, &v.l_u)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gelu;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            n_layers: 1,
            d_model: 2,
            d_ffn: 3,
            n_heads: 1,
            vocab_size: 4,
            max_seq_len: 8,
            ..ModelConfig::desk()
        }
    }

    #[test]
    fn pooler_takes_last_row() {
        let one = Matrix::<f64>::from_rows(&[&[1.0, 2.0]]);
        assert_eq!(pooler(&one).unwrap(), one);
        let three = Matrix::<f64>::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        assert_eq!(pooler(&three).unwrap().as_slice(), &[5.0, 6.0]);
        let four = Matrix::<f64>::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0], &[7.0, 8.0]]);
        assert_eq!(pooler(&four).unwrap().as_slice(), &[7.0, 8.0]);
        assert_eq!(pooler(&Matrix::<f64>::zeros(0, 2)), Err(AdapterError::EmptyPrompt));
    }

    #[test]
    fn fresh_generator_emits_ones() {
        let cfg = ModelConfig::desk();
        let mut rng = Rng::new(1);
        let vg = VectorGenerator::<f64>::init(&cfg, &ParaHyper::default(), &mut rng);
        assert_eq!(vg.d_out(), 2 * 64 + 172);
        for seed in 0..5 {
            let h = Matrix::<f64>::random_normal(seed + 1, 64, 1.0, &mut Rng::new(seed as u64));
            let v = generate_vectors(&vg, &h).unwrap();
            assert_eq!(v, AdjustingVectors::ones(64, 172));
        }
    }

    #[test]
    fn init_statistics() {
        let cfg = ModelConfig::desk();
        let vg = VectorGenerator::<f64>::init(&cfg, &ParaHyper::default(), &mut Rng::new(9));
        let w = vg.w_down.as_slice();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / w.len() as f64;
        assert!(mean.abs() < 0.003, "mean {mean}");
        assert!((var.sqrt() - 0.02).abs() < 0.002, "std {}", var.sqrt());
        assert!(vg.w_up.as_slice().iter().all(|&x| x == 0.0));
        assert!(vg.b_up.as_slice().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn prompt_aware_once_trained() {
        let cfg = ModelConfig::desk();
        let mut rng = Rng::new(2);
        let mut vg = VectorGenerator::<f64>::init(&cfg, &ParaHyper::default(), &mut rng);
        vg.w_up = Matrix::random_normal(vg.r(), vg.d_out(), 0.5, &mut rng);
        let mut h1 = Matrix::<f64>::random_normal(4, 64, 1.0, &mut rng);
        let h2 = h1.clone();
        h1.row_mut(3)[0] += 1.0;
        assert_ne!(generate_vectors(&vg, &h1).unwrap(), generate_vectors(&vg, &h2).unwrap());
    }

    #[test]
    fn hand_sized_generator() {
        // d_model = 2, d_ffn = 3, r = 1. Expected values from a direct float
        // evaluation of l = gelu(h_last · W_down) · W_up + b_up.
        let cfg = tiny_config();
        let hyper = ParaHyper { r: 1, ..ParaHyper::default() };
        let mut vg = VectorGenerator::<f64>::init(&cfg, &hyper, &mut Rng::new(0));
        vg.w_down = Matrix::from_rows(&[&[0.5], &[-0.25]]);
        vg.w_up = Matrix::from_rows(&[&[1.0, -2.0, 0.5, 0.0, 3.0, -1.0, 2.0]]);
        vg.b_up = Matrix::from_rows(&[&[1.0, 1.0, 1.0, 1.0, 0.5, 1.0, 1.0]]);
        let h = Matrix::from_rows(&[&[9.0, 9.0], &[0.8, -1.2]]);
        let v = generate_vectors(&vg, &h).unwrap();
        let z: f64 = 0.8 * 0.5 + -1.2 * -0.25;
        assert_eq!(z, 0.7);
        let a: f64 = gelu(z);
        assert!((a - 0.530_570_134_705_116_8).abs() < 1e-15, "{a}");
        let expect = [1.0 + a, 1.0 - 2.0 * a, 1.0 + 0.5 * a, 1.0, 0.5 + 3.0 * a, 1.0 - a, 1.0 + 2.0 * a];
        assert_eq!(v.l_q.len(), 2);
        assert_eq!(v.l_v.len(), 2);
        assert_eq!(v.l_u.len(), 3);
        let got: Vec<f64> = v.l_q.iter().chain(&v.l_v).chain(&v.l_u).copied().collect();
        for (g, e) in got.iter().zip(expect) {
            assert!((g - e).abs() < 1e-15);
        }
    }

    #[test]
    fn apply_ones_is_identity() {
        let mut rng = Rng::new(3);
        let q = Matrix::<f64>::random_normal(3, 2, 1.0, &mut rng);
        let u = Matrix::<f64>::random_normal(3, 3, 1.0, &mut rng);
        let v = AdjustingVectors::ones(2, 3);
        let (mut q2, mut u2) = (q.clone(), u.clone());
        apply_q(&v, &mut q2).unwrap();
        apply_u(&v, &mut u2).unwrap();
        assert!(q2.bit_eq(&q));
        assert!(u2.bit_eq(&u));
    }

    #[test]
    fn apply_rejects_wrong_length() {
        let v = AdjustingVectors::<f64>::ones(2, 3);
        let mut m = Matrix::<f64>::zeros(2, 5);
        assert!(apply_v(&v, &mut m).is_err());
    }

    #[test]
    fn apply_matches_loop() {
        let mut rng = Rng::new(4);
        let v = AdjustingVectors {
            l_q: (0..4).map(|_| rng.normal(1.0)).collect(),
            l_v: (0..4).map(|_| rng.normal(1.0)).collect(),
            l_u: (0..6).map(|_| rng.normal(1.0)).collect(),
        };
        let val = Matrix::<f64>::random_normal(5, 4, 1.0, &mut rng);
        let mut out = val.clone();
        apply_v(&v, &mut out).unwrap();
        for i in 0..5 {
            for j in 0..4 {
                assert_eq!(out.get(i, j), v.l_v[j] * val.get(i, j));
            }
        }
    }
}

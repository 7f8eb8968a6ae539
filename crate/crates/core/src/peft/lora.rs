use crate::config::ModelConfig;
use crate::tensor::{matmul, Matrix, Rng, Scalar};

use super::{AdapterError, LoraHyper, Projection};

/// Low-rank delta for one weight matrix: `ΔW = scaling · A · B`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraParams<T> {
    /// `d_in × rank`
    pub a: Matrix<T>,
    /// `rank × d_out`
    pub b: Matrix<T>,
    pub scaling: T,
}

impl<T: Scalar> LoraParams<T> {
    /// `A ~ N(0, init_std²)`, `B = 0`, so the initial delta is zero.
    pub fn init(d_in: usize, d_out: usize, hyper: &LoraHyper, rng: &mut Rng) -> Self {
        LoraParams {
            a: Matrix::random_normal(d_in, hyper.rank, hyper.init_std, rng),
            b: Matrix::zeros(hyper.rank, d_out),
            scaling: T::of(hyper.scaling()),
        }
    }

    pub fn rank(&self) -> usize {
        self.a.cols()
    }

    /// Dense `scaling · A · B`.
    pub fn delta(&self) -> Result<Matrix<T>, AdapterError> {
        let mut d = matmul(&self.a, &self.b)?;
        d.scale_in_place(self.scaling);
        Ok(d)
    }
}

/// LoRA deltas for the targeted projections of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraLayer<T> {
    pub adapters: Vec<(Projection, LoraParams<T>)>,
}

impl<T: Scalar> LoraLayer<T> {
    pub fn init(config: &ModelConfig, hyper: &LoraHyper, rng: &mut Rng) -> Self {
        let mut targets = hyper.targets.clone();
        targets.sort();
        targets.dedup();
        let adapters = targets
            .into_iter()
            .map(|p| {
                let (d_in, d_out) = p.dims(config);
                (p, LoraParams::init(d_in, d_out, hyper, rng))
            })
            .collect();
        LoraLayer { adapters }
    }

    pub fn get(&self, p: Projection) -> Option<&LoraParams<T>> {
        self.adapters.iter().find(|(q, _)| *q == p).map(|(_, l)| l)
    }
}

/// Un-merged forward: `x·W + scaling·(x·A)·B`.
///
/// Returns the output and the rank-space activations `x·A`.
pub fn lora_forward<T: Scalar>(
    x: &Matrix<T>,
    w: &Matrix<T>,
    lora: &LoraParams<T>,
) -> Result<(Matrix<T>, Matrix<T>), AdapterError> {
    if lora.a.rows() != w.rows() || lora.b.cols() != w.cols() {
        return Err(AdapterError::DimMismatch {
            what: "lora target",
            adapter: lora.a.rows() * lora.b.cols(),
            model: w.rows() * w.cols(),
        });
    }
    let mut y = matmul(x, w)?;
    let xa = matmul(x, &lora.a)?;
    let delta = matmul(&xa, &lora.b)?;
    y.axpy(lora.scaling, &delta)?;
    Ok((y, xa))
}

use crate::config::{ModelConfig, Positional};
use crate::peft::{Hooks, Projection};
use crate::tensor::{dot, Matrix, Scalar};

use super::{LayerCache, LayerWeights, ModelError};

/// Precomputed rotary angles (`cos`, `sin` per position and pair) and, for
/// sinusoidal models, the additive position table.
#[derive(Debug, Clone)]
pub struct RopeTable<T> {
    half: usize,
    cos: Vec<T>,
    sin: Vec<T>,
    sinusoidal: Vec<T>,
    d_model: usize,
}

impl<T: Scalar> RopeTable<T> {
    pub fn new(c: &ModelConfig) -> Self {
        let half = c.d_head() / 2;
        let (mut cos, mut sin, mut sinusoidal) = (Vec::new(), Vec::new(), Vec::new());
        match c.positional {
            Positional::Rope => {
                cos.reserve(c.max_seq_len * half);
                sin.reserve(c.max_seq_len * half);
                for pos in 0..c.max_seq_len {
                    for k in 0..half {
                        let inv_freq = c.rope_theta.powf(-2.0 * k as f64 / c.d_head() as f64);
                        let angle = pos as f64 * inv_freq;
                        cos.push(T::of(angle.cos()));
                        sin.push(T::of(angle.sin()));
                    }
                }
            }
            Positional::Sinusoidal => {
                sinusoidal.reserve(c.max_seq_len * c.d_model);
                for pos in 0..c.max_seq_len {
                    sinusoidal.extend(sinusoidal_row(pos, c.d_model).into_iter().map(T::of));
                }
            }
        }
        RopeTable {
            half,
            cos,
            sin,
            sinusoidal,
            d_model: c.d_model,
        }
    }

    pub(crate) fn is_rotary(&self) -> bool {
        !self.cos.is_empty()
    }

    pub(crate) fn sinusoidal(&self, pos: usize) -> &[T] {
        &self.sinusoidal[pos * self.d_model..(pos + 1) * self.d_model]
    }
}

/// `PE[pos, 2i] = sin(pos / 10000^(2i/d))`, `PE[pos, 2i+1] = cos(...)`.
pub fn sinusoidal_row(pos: usize, d_model: usize) -> Vec<f64> {
    (0..d_model)
        .map(|j| {
            let i = (j / 2) as f64;
            let angle = pos as f64 / 10_000f64.powf(2.0 * i / d_model as f64);
            if j % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

fn rotate<T: Scalar>(m: &mut Matrix<T>, start_pos: usize, table: &RopeTable<T>, sign: T) {
    if !table.is_rotary() {
        return;
    }
    let half = table.half;
    let cols = m.cols();
    for i in 0..m.rows() {
        let pos = start_pos + i;
        let cs = &table.cos[pos * half..(pos + 1) * half];
        let sn = &table.sin[pos * half..(pos + 1) * half];
        let row = m.row_mut(i);
        for head in row.chunks_mut(2 * half).take(cols / (2 * half)) {
            for k in 0..half {
                let (a, b) = (head[2 * k], head[2 * k + 1]);
                let (c, s) = (cs[k], sign * sn[k]);
                head[2 * k] = a * c - b * s;
                head[2 * k + 1] = a * s + b * c;
            }
        }
    }
}

/// Rotates interleaved pairs of every head; row `i` sits at `start_pos + i`.
pub fn apply_rope<T: Scalar>(m: &mut Matrix<T>, start_pos: usize, table: &RopeTable<T>) {
    rotate(m, start_pos, table, T::one());
}

/// Inverse rotation (transpose of [`apply_rope`]).
pub fn apply_rope_inverse<T: Scalar>(m: &mut Matrix<T>, start_pos: usize, table: &RopeTable<T>) {
    rotate(m, start_pos, table, -T::one());
}

/// RMS normalization with a learned gain: `x / sqrt(mean(x²) + eps) ⊙ g`.
pub fn rms_norm<T: Scalar>(x: &Matrix<T>, gain: &Matrix<T>, eps: f64) -> Matrix<T> {
    rms_norm_with_stats(x, gain, eps).0
}

/// As [`rms_norm`], also returning `1 / rms` per row.
pub fn rms_norm_with_stats<T: Scalar>(x: &Matrix<T>, gain: &Matrix<T>, eps: f64) -> (Matrix<T>, Vec<T>) {
    let mut out = x.clone();
    let n = T::of(x.cols() as f64);
    let eps = T::of(eps);
    let g = gain.as_slice();
    let mut inv = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = out.row_mut(r);
        let ms = row.iter().map(|&v| v * v).sum::<T>() / n;
        let s = T::one() / (ms + eps).sqrt();
        for (v, &gi) in row.iter_mut().zip(g) {
            *v = *v * s * gi;
        }
        inv.push(s);
    }
    (out, inv)
}

/// Causal multi-head attention for `xn.rows()` new positions appended after
/// the cache contents. `xn` is the normalized layer input. Q and V pass
/// through the adapter hooks before rotation and caching; the returned
/// matrix is the attention output after `W_O` (residual not included).
pub fn attention_forward<T: Scalar>(
    lw: &LayerWeights<T>,
    config: &ModelConfig,
    rope: &RopeTable<T>,
    xn: &Matrix<T>,
    cache: &mut LayerCache<T>,
    hooks: Hooks<'_, T>,
) -> Result<Matrix<T>, ModelError> {
    let d = config.d_model;
    if xn.cols() != d {
        return Err(crate::tensor::TensorError::DimMismatch {
            op: "attention_forward",
            left: xn.shape(),
            right: (xn.rows(), d),
        }
        .into());
    }
    let n = xn.rows();
    let start = cache.len();
    if start + n > config.max_seq_len {
        return Err(ModelError::CacheOverflow {
            needed: start + n,
            max: config.max_seq_len,
        });
    }

    let (mut q, _) = hooks.project(Projection::Q, xn, &lw.w_q)?;
    hooks.scale_q(&mut q)?;
    let (mut k, _) = hooks.project(Projection::K, xn, &lw.w_k)?;
    hooks.scale_k(&mut k)?;
    let (mut v, _) = hooks.project(Projection::V, xn, &lw.w_v)?;
    hooks.scale_v(&mut v)?;
    apply_rope(&mut q, start, rope);
    apply_rope(&mut k, start, rope);
    cache.append(&k, &v);
    drop(k);
    drop(v);

    let dh = config.d_head();
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut out = Matrix::zeros(n, d);
    let mut scores: Vec<T> = Vec::with_capacity(start + n);
    for i in 0..n {
        let visible = start + i + 1;
        for h in 0..config.n_heads {
            let cols = h * dh..(h + 1) * dh;
            let qh = &q.row(i)[cols.clone()];
            scores.clear();
            for j in 0..visible {
                scores.push(dot(qh, &cache.key(j)[cols.clone()]) * scale);
            }
            crate::tensor::softmax_in_place(&mut scores)?;
            let orow = &mut out.row_mut(i)[cols.clone()];
            for (j, &p) in scores.iter().enumerate() {
                for (o, &vv) in orow.iter_mut().zip(&cache.value(j)[cols.clone()]) {
                    *o += p * vv;
                }
            }
        }
    }
    drop(q);
    let (y, _) = hooks.project(Projection::O, &out, &lw.w_o)?;
    Ok(y)
}

/// Gated FFN `(g(x·W_G) ⊙ U') · W_D`, with `U'` the hooked Up projection.
pub fn ffn_forward<T: Scalar>(
    lw: &LayerWeights<T>,
    config: &ModelConfig,
    xn: &Matrix<T>,
    hooks: Hooks<'_, T>,
) -> Result<Matrix<T>, ModelError> {
    let (g, _) = hooks.project(Projection::Gate, xn, &lw.w_gate)?;
    let (mut u, _) = hooks.project(Projection::Up, xn, &lw.w_up)?;
    hooks.scale_u(&mut u)?;
    let act = config.ffn_activation;
    for (uv, &gv) in u.as_mut_slice().iter_mut().zip(g.as_slice()) {
        *uv *= act.apply(gv);
    }
    drop(g);
    hooks.scale_ffn_hidden(&mut u)?;
    let (y, _) = hooks.project(Projection::Down, &u, &lw.w_down)?;
    Ok(y)
}

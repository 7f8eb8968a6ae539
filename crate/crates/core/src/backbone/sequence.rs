//! Whole-sequence forward pass without a KV cache.
//!
//! Serves as the full-recompute reference for cached decoding and, with
//! recording enabled, as the forward half of training: every intermediate
//! the backward pass needs is kept in a [`Tape`].

use crate::peft::{AdapterSet, AdjustingVectors, Hooks, Projection};
use crate::tensor::{dot, matmul, softmax_in_place, Matrix, Scalar};

use super::layer::{apply_rope, rms_norm_with_stats};
use super::{Model, ModelError, TokenId};

/// Vector-generator intermediates for one layer.
#[derive(Debug, Clone)]
pub struct VgTape<T> {
    /// `1 × d_model`, the layer input at the final prompt position.
    pub pooled: Matrix<T>,
    /// Pre-activation bottleneck, `1 × r`.
    pub z: Matrix<T>,
    /// Post-activation bottleneck, `1 × r`.
    pub a: Matrix<T>,
    pub vectors: AdjustingVectors<T>,
}

#[derive(Debug, Clone)]
pub struct LayerTape<T> {
    pub x_in: Matrix<T>,
    pub vg: Option<VgTape<T>>,
    pub inv_rms1: Vec<T>,
    pub xn1: Matrix<T>,
    /// Projections before any adapter scaling or rotation.
    pub q_lin: Matrix<T>,
    pub k_lin: Matrix<T>,
    pub v_lin: Matrix<T>,
    pub q_xa: Option<Matrix<T>>,
    pub k_xa: Option<Matrix<T>>,
    pub v_xa: Option<Matrix<T>>,
    pub q_rot: Matrix<T>,
    pub k_rot: Matrix<T>,
    pub v_used: Matrix<T>,
    /// Attention probabilities per head, `n × n`, zero above the diagonal.
    pub probs: Vec<Matrix<T>>,
    pub attn_cat: Matrix<T>,
    pub o_xa: Option<Matrix<T>>,
    pub x_mid: Matrix<T>,
    pub inv_rms2: Vec<T>,
    pub xn2: Matrix<T>,
    pub gate: Matrix<T>,
    pub gate_xa: Option<Matrix<T>>,
    pub u_lin: Matrix<T>,
    pub u_xa: Option<Matrix<T>>,
    pub u_used: Matrix<T>,
    /// `g(G) ⊙ U'` before the (IA)³ FFN scale.
    pub hidden: Matrix<T>,
    pub hidden_used: Matrix<T>,
    pub down_xa: Option<Matrix<T>>,
}

#[derive(Debug, Clone)]
pub struct Tape<T> {
    pub tokens: Vec<TokenId>,
    pub prompt_len: usize,
    pub layers: Vec<LayerTape<T>>,
    pub x_final: Matrix<T>,
    pub inv_rms_final: Vec<T>,
    pub xn_final: Matrix<T>,
}

pub struct SequenceOutput<T> {
    /// `n × vocab` logits for every position.
    pub logits: Matrix<T>,
    pub tape: Option<Tape<T>>,
}

/// Runs the full sequence `tokens`, of which the first `prompt_len` form the
/// prompt (vector generators pool position `prompt_len - 1`).
pub fn forward_sequence<T: Scalar>(
    model: &Model<T>,
    adapter: &AdapterSet<T>,
    tokens: &[TokenId],
    prompt_len: usize,
    record: bool,
) -> Result<SequenceOutput<T>, ModelError> {
    let c = model.config();
    adapter.check_compatible(c)?;
    if tokens.is_empty() || prompt_len == 0 {
        return Err(ModelError::EmptyPrompt);
    }
    assert!(prompt_len <= tokens.len(), "prompt_len exceeds sequence length");
    if tokens.len() > c.max_seq_len {
        return Err(ModelError::CacheOverflow {
            needed: tokens.len(),
            max: c.max_seq_len,
        });
    }
    model.check_tokens(tokens)?;
    let w = model.weights();
    let rope = model.rope();
    let n = tokens.len();
    let d = c.d_model;
    let dh = c.d_head();
    let scale = T::one() / T::of(dh as f64).sqrt();

    let mut x = Matrix::zeros(n, d);
    for (i, &t) in tokens.iter().enumerate() {
        x.row_mut(i).copy_from_slice(w.token_embedding.row(t as usize));
        if !rope.is_rotary() {
            for (v, &p) in x.row_mut(i).iter_mut().zip(rope.sinusoidal(i)) {
                *v += p;
            }
        }
    }

    let mut layer_tapes = Vec::new();
    for (l, lw) in w.layers.iter().enumerate() {
        let vg = match adapter.generator(l) {
            Some(gen) => {
                let pooled = Matrix::row_vector(x.row(prompt_len - 1));
                let (z, a) = gen.hidden(&pooled)?;
                let mut lvec = matmul(&a, &gen.w_up)?;
                lvec.add_assign(&gen.b_up)?;
                let vectors = gen.split(lvec.as_slice());
                Some(VgTape { pooled, z, a, vectors })
            }
            None => None,
        };
        let hooks: Hooks<'_, T> = adapter.hooks(l, vg.as_ref().map(|t| &t.vectors));

        let (xn1, inv_rms1) = rms_norm_with_stats(&x, &lw.attn_norm, c.norm_eps);
        let (q_lin, q_xa) = hooks.project(Projection::Q, &xn1, &lw.w_q)?;
        let (k_lin, k_xa) = hooks.project(Projection::K, &xn1, &lw.w_k)?;
        let (v_lin, v_xa) = hooks.project(Projection::V, &xn1, &lw.w_v)?;
        let mut q_rot = q_lin.clone();
        hooks.scale_q(&mut q_rot)?;
        let mut k_rot = k_lin.clone();
        hooks.scale_k(&mut k_rot)?;
        let mut v_used = v_lin.clone();
        hooks.scale_v(&mut v_used)?;
        apply_rope(&mut q_rot, 0, rope);
        apply_rope(&mut k_rot, 0, rope);

        let mut attn_cat = Matrix::zeros(n, d);
        let mut probs = Vec::with_capacity(if record { c.n_heads } else { 0 });
        for h in 0..c.n_heads {
            let cols = h * dh..(h + 1) * dh;
            let mut p = Matrix::zeros(n, n);
            for i in 0..n {
                let qh = &q_rot.row(i)[cols.clone()];
                let row = &mut p.row_mut(i)[..=i];
                for (j, s) in row.iter_mut().enumerate() {
                    *s = dot(qh, &k_rot.row(j)[cols.clone()]) * scale;
                }
                softmax_in_place(row)?;
                let orow = &mut attn_cat.row_mut(i)[cols.clone()];
                for j in 0..=i {
                    let pj = p.get(i, j);
                    for (o, &vv) in orow.iter_mut().zip(&v_used.row(j)[cols.clone()]) {
                        *o += pj * vv;
                    }
                }
            }
            if record {
                probs.push(p);
            }
        }
        let (attn_out, o_xa) = hooks.project(Projection::O, &attn_cat, &lw.w_o)?;
        let x_in = x.clone();
        x.add_assign(&attn_out)?;
        let x_mid = x.clone();

        let (xn2, inv_rms2) = rms_norm_with_stats(&x, &lw.ffn_norm, c.norm_eps);
        let (gate, gate_xa) = hooks.project(Projection::Gate, &xn2, &lw.w_gate)?;
        let (u_lin, u_xa) = hooks.project(Projection::Up, &xn2, &lw.w_up)?;
        let mut u_used = u_lin.clone();
        hooks.scale_u(&mut u_used)?;
        let act = c.ffn_activation;
        let mut hidden = u_used.clone();
        for (hv, &gv) in hidden.as_mut_slice().iter_mut().zip(gate.as_slice()) {
            *hv *= act.apply(gv);
        }
        let mut hidden_used = hidden.clone();
        hooks.scale_ffn_hidden(&mut hidden_used)?;
        let (ffn_out, down_xa) = hooks.project(Projection::Down, &hidden_used, &lw.w_down)?;
        x.add_assign(&ffn_out)?;

        if record {
            layer_tapes.push(LayerTape {
                x_in,
                vg,
                inv_rms1,
                xn1,
                q_lin,
                k_lin,
                v_lin,
                q_xa,
                k_xa,
                v_xa,
                q_rot,
                k_rot,
                v_used,
                probs,
                attn_cat,
                o_xa,
                x_mid,
                inv_rms2,
                xn2,
                gate,
                gate_xa,
                u_lin,
                u_xa,
                u_used,
                hidden,
                hidden_used,
                down_xa,
            });
        }
    }

    let (xn_final, inv_rms_final) = rms_norm_with_stats(&x, &w.final_norm, c.norm_eps);
    let logits = matmul(&xn_final, &w.lm_head)?;
    let tape = record.then(|| Tape {
        tokens: tokens.to_vec(),
        prompt_len,
        layers: layer_tapes,
        x_final: x,
        inv_rms_final,
        xn_final,
    });
    Ok(SequenceOutput { logits, tape })
}

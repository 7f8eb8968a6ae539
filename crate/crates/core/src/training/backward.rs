//! Reverse pass over a recorded [`Tape`].

use crate::backbone::{apply_rope_inverse, BackboneWeights, LayerTape, Model, SequenceOutput, Tape};
use crate::peft::{AdapterParams, AdapterSet, Ia3Layer, LoraParams, Projection, VectorGenerator};
use crate::tensor::{column_sum_of_product, matmul_transa, matmul_transb, Matrix, Scalar};

use super::TrainError;

/// Which parameters receive gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    /// Adapter tensors only; backbone gradients are never materialized.
    Adapter,
    /// Backbone and adapter tensors (backbone pretraining).
    Full,
}

/// Gradient buffers shaped like the parameters they belong to.
#[derive(Debug, Clone)]
pub struct Grads<T> {
    pub adapter: AdapterSet<T>,
    pub backbone: Option<BackboneWeights<T>>,
}

impl<T: Scalar> Grads<T> {
    pub fn zeros(model: &Model<T>, adapter: &AdapterSet<T>, mode: GradMode) -> Self {
        Grads {
            adapter: adapter.zeros_like(),
            backbone: (mode == GradMode::Full).then(|| BackboneWeights::zeros(model.config())),
        }
    }
}

fn acc<T: Scalar>(dst: &mut Matrix<T>, src: &Matrix<T>) -> Result<(), TrainError> {
    dst.add_assign(src)?;
    Ok(())
}

fn acc_row<T: Scalar>(dst: &mut Matrix<T>, row: &[T]) {
    for (d, &v) in dst.as_mut_slice().iter_mut().zip(row) {
        *d += v;
    }
}

fn acc_row_into<T: Scalar>(dst: &mut [T], row: &[T]) {
    for (d, &v) in dst.iter_mut().zip(row) {
        *d += v;
    }
}

/// `y = rms(x) ⊙ g`: returns dx and accumulates dg.
fn rms_backward<T: Scalar>(
    x: &Matrix<T>,
    gain: &Matrix<T>,
    inv: &[T],
    dy: &Matrix<T>,
    dgain: Option<&mut Matrix<T>>,
) -> Matrix<T> {
    let n = T::of(x.cols() as f64);
    let g = gain.as_slice();
    let mut dx = Matrix::zeros(x.rows(), x.cols());
    let mut dg = vec![T::zero(); x.cols()];
    for r in 0..x.rows() {
        let (xr, dyr, s) = (x.row(r), dy.row(r), inv[r]);
        let mut dot = T::zero();
        for j in 0..xr.len() {
            dot += dyr[j] * g[j] * xr[j];
            dg[j] += dyr[j] * xr[j] * s;
        }
        let k = s * s * s * dot / n;
        for (j, o) in dx.row_mut(r).iter_mut().enumerate() {
            *o = s * dyr[j] * g[j] - k * xr[j];
        }
    }
    if let Some(d) = dgain {
        acc_row(d, &dg);
    }
    dx
}

/// Backward of `y = x·W (+ s·(x·A)·B)`. Returns dx and accumulates into the
/// LoRA and weight gradients when present.
fn proj_backward<T: Scalar>(
    x: &Matrix<T>,
    w: &Matrix<T>,
    lora: Option<(&LoraParams<T>, &Matrix<T>, &mut LoraParams<T>)>,
    dy: &Matrix<T>,
    dw: Option<&mut Matrix<T>>,
) -> Result<Matrix<T>, TrainError> {
    let mut dx = matmul_transb(dy, w)?;
    if let Some((l, xa, g)) = lora {
        let s = l.scaling;
        let mut db = matmul_transa(xa, dy)?;
        db.scale_in_place(s);
        acc(&mut g.b, &db)?;
        let mut dxa = matmul_transb(dy, &l.b)?;
        dxa.scale_in_place(s);
        acc(&mut g.a, &matmul_transa(x, &dxa)?)?;
        acc(&mut dx, &matmul_transb(&dxa, &l.a)?)?;
    }
    if let Some(dw) = dw {
        acc(dw, &matmul_transa(x, dy)?)?;
    }
    Ok(dx)
}

fn lora_pair<'a, T: Scalar>(
    adapter: &'a AdapterSet<T>,
    grads: &'a mut AdapterSet<T>,
    layer: usize,
    p: Projection,
) -> Option<(&'a LoraParams<T>, &'a mut LoraParams<T>)> {
    let (AdapterParams::Lora { layers, .. }, AdapterParams::Lora { layers: glayers, .. }) =
        (&adapter.params, &mut grads.params)
    else {
        return None;
    };
    let l = layers[layer].get(p)?;
    let g = glayers[layer].adapters.iter_mut().find(|(q, _)| *q == p).map(|(_, g)| g)?;
    Some((l, g))
}

fn ia3_pair<'a, T>(adapter: &'a AdapterSet<T>, grads: &'a mut AdapterSet<T>, layer: usize) -> Option<(&'a Ia3Layer<T>, &'a mut Ia3Layer<T>)> {
    match (&adapter.params, &mut grads.params) {
        (AdapterParams::Ia3(a), AdapterParams::Ia3(g)) => Some((&a[layer], &mut g[layer])),
        _ => None,
    }
}

fn para_pair<'a, T>(
    adapter: &'a AdapterSet<T>,
    grads: &'a mut AdapterSet<T>,
    layer: usize,
) -> Option<(&'a VectorGenerator<T>, &'a mut VectorGenerator<T>)> {
    match (&adapter.params, &mut grads.params) {
        (AdapterParams::Para(a), AdapterParams::Para(g)) => Some((&a[layer], &mut g[layer])),
        _ => None,
    }
}

/// Projection backward with the LoRA slot for `p` resolved automatically.
#[allow(clippy::too_many_arguments)]
fn project_back<T: Scalar>(
    adapter: &AdapterSet<T>,
    grads: &mut AdapterSet<T>,
    layer: usize,
    p: Projection,
    x: &Matrix<T>,
    w: &Matrix<T>,
    xa: Option<&Matrix<T>>,
    dy: &Matrix<T>,
    dw: Option<&mut Matrix<T>>,
) -> Result<Matrix<T>, TrainError> {
    let lora = match (lora_pair(adapter, grads, layer, p), xa) {
        (Some((l, g)), Some(xa)) => Some((l, xa, g)),
        _ => None,
    };
    proj_backward(x, w, lora, dy, dw)
}

fn scale_cols<T: Scalar>(m: &mut Matrix<T>, v: &[T]) {
    for r in 0..m.rows() {
        for (x, &s) in m.row_mut(r).iter_mut().zip(v) {
            *x *= s;
        }
    }
}

/// Accumulates gradients of `Σ dlogits ⊙ logits` into `grads`.
pub fn backward<T: Scalar>(
    model: &Model<T>,
    adapter: &AdapterSet<T>,
    output: &SequenceOutput<T>,
    dlogits: &Matrix<T>,
    grads: &mut Grads<T>,
) -> Result<(), TrainError> {
    let tape = output.tape.as_ref().ok_or(TrainError::NoTape)?;
    let w = model.weights();
    let mut bb = grads.backbone.as_mut();

    let d_xn = matmul_transb(dlogits, &w.lm_head)?;
    if let Some(g) = bb.as_deref_mut() {
        acc(&mut g.lm_head, &matmul_transa(&tape.xn_final, dlogits)?)?;
    }
    let mut dx = rms_backward(
        &tape.x_final,
        &w.final_norm,
        &tape.inv_rms_final,
        &d_xn,
        bb.as_deref_mut().map(|g| &mut g.final_norm),
    );

    for l in (0..w.layers.len()).rev() {
        dx = layer_backward(model, adapter, tape, l, dx, grads)?;
    }

    if let Some(g) = grads.backbone.as_mut() {
        for (i, &t) in tape.tokens.iter().enumerate() {
            for (e, &v) in g.token_embedding.row_mut(t as usize).iter_mut().zip(dx.row(i)) {
                *e += v;
            }
        }
    }
    Ok(())
}

fn layer_backward<T: Scalar>(
    model: &Model<T>,
    adapter: &AdapterSet<T>,
    tape: &Tape<T>,
    l: usize,
    dx: Matrix<T>,
    grads: &mut Grads<T>,
) -> Result<Matrix<T>, TrainError> {
    let c = model.config();
    let lw = &model.weights().layers[l];
    let t: &LayerTape<T> = &tape.layers[l];
    let ga = &mut grads.adapter;
    let mut gb = grads.backbone.as_mut().map(|g| &mut g.layers[l]);
    let act = c.ffn_activation;
    let vectors = t.vg.as_ref().map(|v| &v.vectors);
    // Gradient of the concatenated adjusting vector (l_q, l_v, l_u).
    let mut d_l = vec![T::zero(); if vectors.is_some() { 2 * c.d_model + c.d_ffn } else { 0 }];

    // FFN block.
    let d_hidden_used = project_back(
        adapter, ga, l, Projection::Down, &t.hidden_used, &lw.w_down, t.down_xa.as_ref(), &dx,
        gb.as_deref_mut().map(|g| &mut g.w_down),
    )?;
    let mut d_hidden = d_hidden_used.clone();
    if let Some((ia, g)) = ia3_pair(adapter, ga, l) {
        acc_row(&mut g.l_ff, &column_sum_of_product(&d_hidden_used, &t.hidden)?);
        scale_cols(&mut d_hidden, ia.l_ff.as_slice());
    }
    let mut d_u_used = d_hidden.clone();
    let mut d_gate = d_hidden;
    for i in 0..d_u_used.len() {
        let gv = t.gate.as_slice()[i];
        let uv = t.u_used.as_slice()[i];
        d_u_used.as_mut_slice()[i] *= act.apply(gv);
        d_gate.as_mut_slice()[i] *= uv * act.grad(gv);
    }
    let mut d_u_lin = d_u_used.clone();
    if let Some(v) = vectors {
        d_l[2 * c.d_model..].copy_from_slice(&column_sum_of_product(&d_u_used, &t.u_lin)?);
        scale_cols(&mut d_u_lin, &v.l_u);
    }
    let mut d_xn2 = project_back(
        adapter, ga, l, Projection::Up, &t.xn2, &lw.w_up, t.u_xa.as_ref(), &d_u_lin,
        gb.as_deref_mut().map(|g| &mut g.w_up),
    )?;
    acc(&mut d_xn2, &project_back(
        adapter, ga, l, Projection::Gate, &t.xn2, &lw.w_gate, t.gate_xa.as_ref(), &d_gate,
        gb.as_deref_mut().map(|g| &mut g.w_gate),
    )?)?;
    let mut dx_mid = dx;
    acc(&mut dx_mid, &rms_backward(
        &t.x_mid, &lw.ffn_norm, &t.inv_rms2, &d_xn2,
        gb.as_deref_mut().map(|g| &mut g.ffn_norm),
    ))?;

    // Attention block.
    let d_cat = project_back(
        adapter, ga, l, Projection::O, &t.attn_cat, &lw.w_o, t.o_xa.as_ref(), &dx_mid,
        gb.as_deref_mut().map(|g| &mut g.w_o),
    )?;
    let n = tape.tokens.len();
    let dh = c.d_head();
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut d_q = Matrix::zeros(n, c.d_model);
    let mut d_k = Matrix::zeros(n, c.d_model);
    let mut d_v = Matrix::zeros(n, c.d_model);
    let mut dp = vec![T::zero(); n];
    for h in 0..c.n_heads {
        let cols = h * dh..(h + 1) * dh;
        let p = &t.probs[h];
        for i in 0..n {
            let dout = &d_cat.row(i)[cols.clone()];
            let mut rowdot = T::zero();
            for j in 0..=i {
                let pij = p.get(i, j);
                dp[j] = dout.iter().zip(&t.v_used.row(j)[cols.clone()]).map(|(&a, &b)| a * b).sum();
                rowdot += dp[j] * pij;
                for (dv, &o) in d_v.row_mut(j)[cols.clone()].iter_mut().zip(dout) {
                    *dv += pij * o;
                }
            }
            for j in 0..=i {
                let ds = p.get(i, j) * (dp[j] - rowdot) * scale;
                if ds == T::zero() {
                    continue;
                }
                for (dq, &kv) in d_q.row_mut(i)[cols.clone()].iter_mut().zip(&t.k_rot.row(j)[cols.clone()]) {
                    *dq += ds * kv;
                }
                for (dk, &qv) in d_k.row_mut(j)[cols.clone()].iter_mut().zip(&t.q_rot.row(i)[cols.clone()]) {
                    *dk += ds * qv;
                }
            }
        }
    }
    let rope = model.rope();
    apply_rope_inverse(&mut d_q, 0, rope);
    apply_rope_inverse(&mut d_k, 0, rope);

    // Adapter scalings of Q, K and V.
    if let Some(v) = vectors {
        let d = c.d_model;
        d_l[..d].copy_from_slice(&column_sum_of_product(&d_q, &t.q_lin)?);
        d_l[d..2 * d].copy_from_slice(&column_sum_of_product(&d_v, &t.v_lin)?);
        scale_cols(&mut d_q, &v.l_q);
        scale_cols(&mut d_v, &v.l_v);
    }
    if let Some((ia, g)) = ia3_pair(adapter, ga, l) {
        acc_row(&mut g.l_k, &column_sum_of_product(&d_k, &t.k_lin)?);
        acc_row(&mut g.l_v, &column_sum_of_product(&d_v, &t.v_lin)?);
        scale_cols(&mut d_k, ia.l_k.as_slice());
        scale_cols(&mut d_v, ia.l_v.as_slice());
    }

    let mut d_xn1 = project_back(
        adapter, ga, l, Projection::Q, &t.xn1, &lw.w_q, t.q_xa.as_ref(), &d_q,
        gb.as_deref_mut().map(|g| &mut g.w_q),
    )?;
    acc(&mut d_xn1, &project_back(
        adapter, ga, l, Projection::K, &t.xn1, &lw.w_k, t.k_xa.as_ref(), &d_k,
        gb.as_deref_mut().map(|g| &mut g.w_k),
    )?)?;
    acc(&mut d_xn1, &project_back(
        adapter, ga, l, Projection::V, &t.xn1, &lw.w_v, t.v_xa.as_ref(), &d_v,
        gb.as_deref_mut().map(|g| &mut g.w_v),
    )?)?;
    let mut dx_in = dx_mid;
    acc(&mut dx_in, &rms_backward(
        &t.x_in, &lw.attn_norm, &t.inv_rms1, &d_xn1,
        gb.as_deref_mut().map(|g| &mut g.attn_norm),
    ))?;

    // Vector generator: l = g(pooled·W_down)·W_up + b_up.
    if let (Some(vt), Some((gen, g))) = (t.vg.as_ref(), para_pair(adapter, ga, l)) {
        let d_l = Matrix::row_vector(&d_l);
        acc(&mut g.b_up, &d_l)?;
        acc(&mut g.w_up, &matmul_transa(&vt.a, &d_l)?)?;
        let mut d_z = matmul_transb(&d_l, &gen.w_up)?;
        for (dz, &z) in d_z.as_mut_slice().iter_mut().zip(vt.z.as_slice()) {
            *dz *= gen.activation.grad(z);
        }
        acc(&mut g.w_down, &matmul_transa(&vt.pooled, &d_z)?)?;
        let d_pooled = matmul_transb(&d_z, &gen.w_down)?;
        acc_row_into(dx_in.row_mut(tape.prompt_len - 1), d_pooled.as_slice());
    }
    Ok(dx_in)
}

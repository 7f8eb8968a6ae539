//! Central finite-difference verification of the reverse pass.

use serde::{Deserialize, Serialize};

use crate::backbone::Model;
use crate::peft::AdapterSet;

use super::trainer::batch_gradients;
use super::{loss, Example, GradMode, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCheckSpec {
    pub epsilon: f64,
    pub tolerance: f64,
}

impl Default for GradCheckSpec {
    fn default() -> Self {
        GradCheckSpec { epsilon: 1e-4, tolerance: 1e-5 }
    }
}

/// Worst disagreement inside one parameter tensor.
///
/// `max_rel_error` is `max_i |a_i - n_i| / max(max_i |a_i|, max_i |n_i|)`:
/// the largest absolute deviation relative to the block's gradient scale.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockError {
    pub name: String,
    pub len: usize,
    pub max_rel_error: f64,
    pub max_abs_analytic: f64,
    pub max_abs_numeric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockError>,
    pub epsilon: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }
}

fn block_error(name: String, analytic: &[f64], numeric: &[f64]) -> BlockError {
    let max_a = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let max_n = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let max_diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    let scale = max_a.max(max_n).max(f64::MIN_POSITIVE);
    BlockError {
        name,
        len: analytic.len(),
        max_rel_error: max_diff / scale,
        max_abs_analytic: max_a,
        max_abs_numeric: max_n,
    }
}

/// Compares analytic adapter gradients of the mean target loss over `batch`
/// with central differences, block by block. With `GradMode::Full` the
/// backbone tensors are checked as well.
pub fn gradcheck(
    model: &Model<f64>,
    adapter: &AdapterSet<f64>,
    batch: &[Example],
    mode: GradMode,
    spec: &GradCheckSpec,
) -> Result<GradCheckReport, TrainError> {
    let (_, grads) = batch_gradients(model, adapter, batch, mode)?;
    let eps = spec.epsilon;
    let mut blocks = Vec::new();

    let names: Vec<String> = adapter.blocks().into_iter().map(|b| b.name).collect();
    let analytic: Vec<Vec<f64>> = grads.adapter.blocks().iter().map(|b| b.value.to_vec()).collect();
    let mut probe = adapter.clone();
    for (i, name) in names.into_iter().enumerate() {
        let mut numeric = Vec::with_capacity(analytic[i].len());
        for j in 0..analytic[i].len() {
            let orig = probe.blocks()[i].value.as_slice()[j];
            let mut eval = |v: f64| -> Result<f64, TrainError> {
                probe.blocks_mut()[i].as_mut_slice()[j] = v;
                loss(model, &probe, batch)
            };
            let up = eval(orig + eps)?;
            let down = eval(orig - eps)?;
            probe.blocks_mut()[i].as_mut_slice()[j] = orig;
            numeric.push((up - down) / (2.0 * eps));
        }
        blocks.push(block_error(name, &analytic[i], &numeric));
    }

    if let Some(bg) = &grads.backbone {
        let mut probe = model.clone();
        let analytic: Vec<(String, Vec<f64>)> =
            bg.named().into_iter().map(|(n, m)| (n, m.to_vec())).collect();
        for (i, (name, a)) in analytic.into_iter().enumerate() {
            let len = a.len();
            let mut numeric = Vec::with_capacity(len);
            for j in 0..len {
                let orig = probe.weights().named()[i].1.as_slice()[j];
                let mut eval = |v: f64| -> Result<f64, TrainError> {
                    probe.weights_mut().named_mut()[i].1.as_mut_slice()[j] = v;
                    loss(&probe, adapter, batch)
                };
                let up = eval(orig + eps)?;
                let down = eval(orig - eps)?;
                probe.weights_mut().named_mut()[i].1.as_mut_slice()[j] = orig;
                numeric.push((up - down) / (2.0 * eps));
            }
            blocks.push(block_error(format!("backbone.{name}"), &a, &numeric));
        }
    }

    let pass = blocks.iter().all(|b| b.max_rel_error < spec.tolerance);
    Ok(GradCheckReport { blocks, epsilon: eps, tolerance: spec.tolerance, pass })
}

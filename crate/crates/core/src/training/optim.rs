use serde::{Deserialize, Serialize};

use crate::tensor::{Matrix, Scalar};

/// Linear warmup from 0 to `peak` over `warmup_steps`, then linear decay that
/// reaches 0 at the final step `total_steps - 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn new(peak: f64, warmup_fraction: f64, total_steps: usize) -> Self {
        let last = total_steps.saturating_sub(1);
        let warmup_steps = ((warmup_fraction * total_steps as f64).floor() as usize).min(last.saturating_sub(1));
        LrSchedule { peak, warmup_steps, total_steps }
    }

    pub fn at(&self, step: usize) -> f64 {
        let last = self.total_steps.saturating_sub(1);
        if step >= last {
            return if last == 0 { self.peak } else { 0.0 };
        }
        if step < self.warmup_steps {
            return self.peak * step as f64 / self.warmup_steps as f64;
        }
        self.peak * (last - step) as f64 / (last - self.warmup_steps) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decay applied to matrices; vectors and biases are never decayed.
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// AdamW with decoupled weight decay. Moments are kept in f64.
#[derive(Debug, Clone)]
pub struct AdamW {
    cfg: AdamWConfig,
    decay: Vec<bool>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u32,
}

impl AdamW {
    /// `shapes` gives each parameter block's length and whether it is decayed.
    pub fn new(cfg: AdamWConfig, blocks: &[(usize, bool)]) -> Self {
        AdamW {
            cfg,
            decay: blocks.iter().map(|b| b.1).collect(),
            m: blocks.iter().map(|b| vec![0.0; b.0]).collect(),
            v: blocks.iter().map(|b| vec![0.0; b.0]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u32 {
        self.t
    }

    pub fn step<T: Scalar>(&mut self, params: Vec<&mut Matrix<T>>, grads: &[&Matrix<T>], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter block count changed");
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (b, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let wd = if self.decay[b] { c.weight_decay } else { 0.0 };
            let (m, v) = (&mut self.m[b], &mut self.v[b]);
            for (i, (pv, &gv)) in p.as_mut_slice().iter_mut().zip(g.as_slice()).enumerate() {
                let gv = gv.as_f64();
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gv;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gv * gv;
                let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + c.eps);
                let x = pv.as_f64();
                *pv = T::of(x - lr * (update + wd * x));
            }
        }
    }
}

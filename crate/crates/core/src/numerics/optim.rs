//! AdamW with decoupled weight decay.
//!
//! The optimizer hands back the proposed parameter change instead of
//! mutating parameters, so callers can project the change before applying it.

use serde::{Deserialize, Serialize};

use super::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamW {
    cfg: AdamWConfig,
    step: u64,
    first: Vec<Mat>,
    second: Vec<Mat>,
}

impl AdamW {
    /// One moment pair per parameter shape, in parameter order.
    pub fn new(cfg: AdamWConfig, shapes: &[(usize, usize)]) -> Self {
        Self {
            cfg,
            step: 0,
            first: shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect(),
            second: shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Advances the moments and returns the update `Δθ` for every parameter.
    pub fn deltas(&mut self, params: &[&Mat], grads: &[&Mat]) -> Vec<Mat> {
        assert_eq!(params.len(), self.first.len());
        assert_eq!(grads.len(), self.first.len());
        self.step += 1;
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let mut out = Vec::with_capacity(params.len());
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            let m = &mut self.first[k];
            let v = &mut self.second[k];
            let mut delta = Mat::zeros(p.rows(), p.cols());
            let it = m
                .as_mut_slice()
                .iter_mut()
                .zip(v.as_mut_slice().iter_mut())
                .zip(g.as_slice())
                .zip(p.as_slice())
                .zip(delta.as_mut_slice());
            for ((((mi, vi), gi), pi), di) in it {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *di = -lr * (mhat / (vhat.sqrt() + eps) + weight_decay * pi);
            }
            out.push(delta);
        }
        out
    }
}

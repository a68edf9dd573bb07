//! Adam with bias correction, plus global-norm gradient clipping.

use crate::autodiff::Tensor;
use crate::error::{GaError, Result};

pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &[(String, Tensor)], lr: f64) -> AdamState {
        AdamState {
            m: params.iter().map(|(_, p)| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|(_, p)| vec![0.0; p.len()]).collect(),
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One update over all parameters. Rejects the whole step if any gradient
    /// is non-finite, naming the offending parameter; no state mutates in
    /// that case.
    pub fn step(&mut self, params: &[(String, Tensor)]) -> Result<()> {
        assert_eq!(params.len(), self.m.len(), "parameter registry changed");
        for (name, p) in params {
            if p.grad().iter().any(|g| !g.is_finite()) {
                return Err(GaError::NanGradient(name.clone()));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (_, p)) in params.iter().enumerate() {
            let g = p.grad();
            let mut data = p.data_mut();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..data.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                data[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(params: &[(String, Tensor)], max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for (_, p) in params {
        for &g in p.grad().iter() {
            sq += g * g;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for (_, p) in params {
            for g in p.grad_mut().iter_mut() {
                *g *= scale;
            }
        }
    }
    norm
}

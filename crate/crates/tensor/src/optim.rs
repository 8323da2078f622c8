//! AdamW with decoupled weight decay and a cosine-annealed learning rate.

use std::f64::consts::PI;

use crate::error::{Result, TensorError};
use crate::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Optimizer state. Moment buffers line up one-to-one with the parameter list
/// handed to [`AdamW::new`].
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// Learning rate used by the most recent step.
    pub lr: f64,
    params: Vec<Tensor>,
}

impl AdamW {
    pub fn new(params: Vec<Tensor>, config: AdamWConfig) -> Self {
        let m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        let v = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        AdamW {
            config,
            step: 0,
            m,
            v,
            lr: 0.0,
            params,
        }
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn zero_grad(&self) {
        self.params.iter().for_each(Tensor::zero_grad);
    }

    /// One update using the gradients currently stored on the parameters.
    /// Parameters without a gradient are treated as having a zero gradient.
    ///
    /// Every gradient is checked for finiteness before anything is modified,
    /// so a failing step leaves parameters and moments untouched.
    pub fn step(&mut self, lr: f64) -> Result<()> {
        let grads: Vec<Option<Vec<f64>>> = self.params.iter().map(Tensor::grad).collect();
        for (index, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(TensorError::NonFiniteGradient {
                        index,
                        len: g.len(),
                    });
                }
            }
        }
        self.step += 1;
        self.lr = lr;
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, p) in self.params.iter().enumerate() {
            let mut w = p.to_vec();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..w.len() {
                let g = grads[i].as_ref().map_or(0.0, |g| g[j]);
                w[j] -= lr * weight_decay * w[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                w[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            p.set_values(w)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSchedule {
    pub lr_max: f64,
    pub lr_min: f64,
    pub total_steps: u64,
}

impl CosineSchedule {
    pub fn new(lr_max: f64, lr_min: f64, total_steps: u64) -> Self {
        CosineSchedule {
            lr_max,
            lr_min,
            total_steps: total_steps.max(1),
        }
    }

    /// Annealed rate at `step`; steps past the horizon are clamped.
    pub fn lr(&self, step: u64) -> f64 {
        let t = step.min(self.total_steps) as f64 / self.total_steps as f64;
        self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + (PI * t).cos())
    }
}

//! Parameterised layers and the [`Module`] visitor used for optimisation and
//! checkpointing.

use rand::Rng;

use crate::error::Result;
use crate::ops::{self, BatchNormMode};
use crate::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Trained by the optimizer.
    Parameter,
    /// State that is saved but not trained (batch-norm running statistics).
    Buffer,
}

/// Anything that owns named tensors.
pub trait Module {
    /// Calls `f` once per owned tensor, in a stable order, with a dotted name
    /// rooted at `prefix`.
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, Role));

    fn parameters(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        self.visit("", &mut |_, t, role| {
            if role == Role::Parameter {
                out.push(t.clone());
            }
        });
        out
    }

    fn named_tensors(&self, prefix: &str) -> Vec<(String, Tensor, Role)> {
        let mut out = Vec::new();
        self.visit(prefix, &mut |name, t, role| {
            out.push((name.to_string(), t.clone(), role))
        });
        out
    }

    fn num_parameters(&self) -> usize {
        self.parameters().iter().map(Tensor::numel).sum()
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// `U(−bound, bound)` samples.
pub fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::param(shape, data).expect("extent product matches")
}

/// He-uniform: `U(±√(6 / fan_in))`.
pub fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    uniform(shape, (6.0 / fan_in as f64).sqrt(), rng)
}

fn zeros_param(n: usize) -> Tensor {
    Tensor::param(&[n], vec![0.0; n]).expect("extent product matches")
}

fn ones_param(n: usize) -> Tensor {
    Tensor::param(&[n], vec![1.0; n]).expect("extent product matches")
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// He-uniform weights, zero bias.
    pub fn he(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        Linear {
            weight: he_uniform(&[out_dim, in_dim], in_dim, rng),
            bias: zeros_param(out_dim),
        }
    }

    /// `U(±1/√in)` for weights and bias.
    pub fn scaled_uniform(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Linear {
            weight: uniform(&[out_dim, in_dim], bound, rng),
            bias: uniform(&[out_dim], bound, rng),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        ops::linear(x, &self.weight, Some(&self.bias))
    }
}

impl Module for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, Role)) {
        f(&join(prefix, "weight"), &self.weight, Role::Parameter);
        f(&join(prefix, "bias"), &self.bias, Role::Parameter);
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn he(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        with_bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        Conv2d {
            weight: he_uniform(&[out_ch, in_ch, kernel, kernel], fan_in, rng),
            bias: with_bias.then(|| zeros_param(out_ch)),
            stride,
            pad,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        ops::conv2d(x, &self.weight, self.bias.as_ref(), self.stride, self.pad)
    }
}

impl Module for Conv2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, Role)) {
        f(&join(prefix, "weight"), &self.weight, Role::Parameter);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b, Role::Parameter);
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm2d {
    pub const MOMENTUM: f64 = 0.1;
    pub const EPS: f64 = 1e-5;

    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: ones_param(channels),
            beta: zeros_param(channels),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            momentum: Self::MOMENTUM,
            eps: Self::EPS,
        }
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mode = if train {
            BatchNormMode::Train {
                momentum: self.momentum,
            }
        } else {
            BatchNormMode::Eval
        };
        ops::batch_norm2d(
            x,
            &self.gamma,
            &self.beta,
            &self.running_mean,
            &self.running_var,
            mode,
            self.eps,
        )
    }
}

impl Module for BatchNorm2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, Role)) {
        f(&join(prefix, "gamma"), &self.gamma, Role::Parameter);
        f(&join(prefix, "beta"), &self.beta, Role::Parameter);
        f(&join(prefix, "running_mean"), &self.running_mean, Role::Buffer);
        f(&join(prefix, "running_var"), &self.running_var, Role::Buffer);
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: ones_param(dim),
            beta: zeros_param(dim),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        ops::layer_norm(x, &self.gamma, &self.beta, self.eps)
    }
}

impl Module for LayerNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, Role)) {
        f(&join(prefix, "gamma"), &self.gamma, Role::Parameter);
        f(&join(prefix, "beta"), &self.beta, Role::Parameter);
    }
}

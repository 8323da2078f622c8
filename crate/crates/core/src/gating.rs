//! Gates that turn expert embeddings into simplex weights over experts.
//!
//! The attention gate projects each expert's embedding to a shared width,
//! treats the experts as an unordered token set, runs pre-norm transformer
//! layers over it and scores every token with one shared linear head.

use moed_tensor::nn::{join, LayerNorm, Linear, Module, Role};
use moed_tensor::{ops, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatingConfig {
    /// Transformer layers M.
    pub layers: usize,
    /// Attention heads H.
    pub heads: usize,
    /// Shared token width D.
    pub model_dim: usize,
    /// Hidden width F of each MLP block.
    pub mlp_dim: usize,
}

impl Default for GatingConfig {
    fn default() -> Self {
        GatingConfig {
            layers: 2,
            heads: 4,
            model_dim: 32,
            mlp_dim: 512,
        }
    }
}

impl GatingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.model_dim == 0 || self.model_dim % self.heads != 0 {
            return Err(Error::config(format!(
                "model_dim {} must be a positive multiple of heads {}",
                self.model_dim, self.heads
            )));
        }
        if self.mlp_dim == 0 {
            return Err(Error::config("mlp_dim must be positive"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }
}

/// `A = E + MSA(LN(E))`, `out = A + MLP(LN(A))`.
#[derive(Debug, Clone)]
pub struct TransformerLayer {
    heads: usize,
    ln1: LayerNorm,
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    ln2: LayerNorm,
    mlp_in: Linear,
    mlp_out: Linear,
}

impl TransformerLayer {
    pub fn new(cfg: &GatingConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.model_dim;
        TransformerLayer {
            heads: cfg.heads,
            ln1: LayerNorm::new(d),
            wq: Linear::scaled_uniform(d, d, rng),
            wk: Linear::scaled_uniform(d, d, rng),
            wv: Linear::scaled_uniform(d, d, rng),
            wo: Linear::scaled_uniform(d, d, rng),
            ln2: LayerNorm::new(d),
            mlp_in: Linear::scaled_uniform(d, cfg.mlp_dim, rng),
            mlp_out: Linear::scaled_uniform(cfg.mlp_dim, d, rng),
        }
    }

    fn split_heads(&self, x: &Tensor) -> Result<Tensor> {
        let &[b, n, d] = x.shape() else { unreachable!() };
        let h = self.heads;
        let x = ops::reshape(x, &[b, n, h, d / h])?;
        let x = ops::permute(&x, &[0, 2, 1, 3])?;
        Ok(ops::reshape(&x, &[b * h, n, d / h])?)
    }

    fn merge_heads(&self, x: &Tensor, b: usize) -> Result<Tensor> {
        let &[_, n, dh] = x.shape() else { unreachable!() };
        let h = self.heads;
        let x = ops::reshape(x, &[b, h, n, dh])?;
        let x = ops::permute(&x, &[0, 2, 1, 3])?;
        Ok(ops::reshape(&x, &[b, n, h * dh])?)
    }

    /// Full (unmasked) multi-head self-attention over the N tokens.
    pub fn attention(&self, x: &Tensor) -> Result<Tensor> {
        let b = x.shape()[0];
        let q = self.split_heads(&self.wq.forward(x)?)?;
        let k = self.split_heads(&self.wk.forward(x)?)?;
        let v = self.split_heads(&self.wv.forward(x)?)?;
        let heads = ops::scaled_dot_product_attention(&q, &k, &v)?;
        self.wo.forward(&self.merge_heads(&heads, b)?).map_err(Into::into)
    }

    /// `x`: `[B, N, D]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 3 || x.shape()[2] != self.ln1.gamma.numel() {
            return Err(Error::data(format!(
                "transformer layer expects [B, N, {}], got {:?}",
                self.ln1.gamma.numel(),
                x.shape()
            )));
        }
        let a = ops::add(x, &self.attention(&self.ln1.forward(x)?)?)?;
        let hidden = ops::relu(&self.mlp_in.forward(&self.ln2.forward(&a)?)?);
        Ok(ops::add(&a, &self.mlp_out.forward(&hidden)?)?)
    }
}

impl Module for TransformerLayer {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, Role)) {
        self.ln1.visit(&join(prefix, "ln1"), f);
        self.wq.visit(&join(prefix, "wq"), f);
        self.wk.visit(&join(prefix, "wk"), f);
        self.wv.visit(&join(prefix, "wv"), f);
        self.wo.visit(&join(prefix, "wo"), f);
        self.ln2.visit(&join(prefix, "ln2"), f);
        self.mlp_in.visit(&join(prefix, "mlp_in"), f);
        self.mlp_out.visit(&join(prefix, "mlp_out"), f);
    }
}

fn check_embeddings(embeddings: &[Tensor], dims: &[usize]) -> Result<usize> {
    if embeddings.len() != dims.len() {
        return Err(Error::data(format!(
            "gate expects {} embeddings, got {}",
            dims.len(),
            embeddings.len()
        )));
    }
    let b = embeddings.first().map_or(0, |e| e.shape()[0]);
    for (i, (e, &d)) in embeddings.iter().zip(dims).enumerate() {
        if e.shape() != [b, d] {
            return Err(Error::data(format!(
                "embedding {i} has shape {:?}, expected [{b}, {d}]",
                e.shape()
            )));
        }
    }
    Ok(b)
}

#[derive(Debug, Clone)]
pub struct GatingNetwork {
    pub config: GatingConfig,
    /// One projection per expert, `d_i → D`.
    pub projections: Vec<Linear>,
    pub layers: Vec<TransformerLayer>,
    /// Shared token scorer, `D → 1`.
    pub head: Linear,
}

impl GatingNetwork {
    pub fn new(cfg: &GatingConfig, embed_dims: &[usize], rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        if embed_dims.is_empty() {
            return Err(Error::config("gate needs at least one expert"));
        }
        let projections = embed_dims
            .iter()
            .map(|&d| Linear::scaled_uniform(d, cfg.model_dim, rng))
            .collect();
        let layers = (0..cfg.layers).map(|_| TransformerLayer::new(cfg, rng)).collect();
        Ok(GatingNetwork {
            config: *cfg,
            projections,
            layers,
            head: Linear::scaled_uniform(cfg.model_dim, 1, rng),
        })
    }

    pub fn n_experts(&self) -> usize {
        self.projections.len()
    }

    fn embed_dims(&self) -> Vec<usize> {
        self.projections.iter().map(Linear::in_dim).collect()
    }

    /// Projects each `[B, d_i]` embedding and stacks them into `[B, N, D]`.
    pub fn stack_embeddings(&self, embeddings: &[Tensor]) -> Result<Tensor> {
        let b = check_embeddings(embeddings, &self.embed_dims())?;
        let d = self.config.model_dim;
        let rows = embeddings
            .iter()
            .zip(&self.projections)
            .map(|(e, p)| Ok(ops::reshape(&p.forward(e)?, &[b, 1, d])?))
            .collect::<Result<Vec<_>>>()?;
        Ok(ops::concat(&rows, 1)?)
    }

    /// Weights `[B, N]` from stacked tokens `[B, N, D]`.
    pub fn weights(&self, tokens: &Tensor) -> Result<Tensor> {
        let mut h = tokens.clone();
        for layer in &self.layers {
            h = layer.forward(&h)?;
        }
        let &[b, n, _] = h.shape() else { unreachable!() };
        let scores = ops::reshape(&self.head.forward(&h)?, &[b, n])?;
        Ok(ops::softmax(&scores, 1)?)
    }

    pub fn forward(&self, embeddings: &[Tensor]) -> Result<Tensor> {
        self.weights(&self.stack_embeddings(embeddings)?)
    }

    /// The same gate with its expert slots reordered: slot `i` of the result
    /// is slot `perm[i]` of `self`. Parameters are shared, not copied.
    pub fn reordered(&self, perm: &[usize]) -> GatingNetwork {
        GatingNetwork {
            config: self.config,
            projections: perm.iter().map(|&p| self.projections[p].clone()).collect(),
            layers: self.layers.clone(),
            head: self.head.clone(),
        }
    }
}

impl Module for GatingNetwork {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, Role)) {
        for (i, p) in self.projections.iter().enumerate() {
            p.visit(&join(prefix, &format!("proj{i}")), f);
        }
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("layer{i}")), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }
}

/// Baseline gate: one affine map over the concatenated embeddings.
#[derive(Debug, Clone)]
pub struct ConcatGate {
    pub embed_dims: Vec<usize>,
    pub linear: Linear,
}

impl ConcatGate {
    pub fn new(embed_dims: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if embed_dims.is_empty() {
            return Err(Error::config("gate needs at least one expert"));
        }
        let total = embed_dims.iter().sum();
        Ok(ConcatGate {
            embed_dims: embed_dims.to_vec(),
            linear: Linear::scaled_uniform(total, embed_dims.len(), rng),
        })
    }

    pub fn n_experts(&self) -> usize {
        self.embed_dims.len()
    }

    pub fn forward(&self, embeddings: &[Tensor]) -> Result<Tensor> {
        check_embeddings(embeddings, &self.embed_dims)?;
        let joined = ops::concat(embeddings, 1)?;
        Ok(ops::softmax(&self.linear.forward(&joined)?, 1)?)
    }
}

impl Module for ConcatGate {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, Role)) {
        self.linear.visit(&join(prefix, "linear"), f);
    }
}

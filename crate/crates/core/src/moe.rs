//! Expert ensemble fused by input-dependent weights over expert logits.

use std::collections::BTreeSet;
use std::fmt;

use moed_tensor::nn::{Module, Role};
use moed_tensor::{ops, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{self, FeatureConfig, FeatureKind, Waveform};
use crate::error::{Error, Result};
use crate::experts::{Expert, ExpertOutput, FeatureBatch, FeatureSet, FAKE};
use crate::gating::{ConcatGate, GatingConfig, GatingNetwork};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateVariant {
    /// Transformer gate over projected expert embeddings.
    Att,
    /// Single affine map over concatenated embeddings.
    Cat,
}

impl fmt::Display for GateVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GateVariant::Att => "att",
            GateVariant::Cat => "cat",
        })
    }
}

#[derive(Debug, Clone)]
pub enum Gate {
    Att(GatingNetwork),
    Cat(ConcatGate),
}

impl Gate {
    pub fn new(variant: GateVariant, cfg: &GatingConfig, embed_dims: &[usize], rng: &mut impl Rng) -> Result<Self> {
        Ok(match variant {
            GateVariant::Att => Gate::Att(GatingNetwork::new(cfg, embed_dims, rng)?),
            GateVariant::Cat => Gate::Cat(ConcatGate::new(embed_dims, rng)?),
        })
    }

    pub fn variant(&self) -> GateVariant {
        match self {
            Gate::Att(_) => GateVariant::Att,
            Gate::Cat(_) => GateVariant::Cat,
        }
    }

    pub fn n_experts(&self) -> usize {
        match self {
            Gate::Att(g) => g.n_experts(),
            Gate::Cat(g) => g.n_experts(),
        }
    }

    /// `[B, N]` weights from N embeddings of shape `[B, d_i]`.
    pub fn forward(&self, embeddings: &[Tensor]) -> Result<Tensor> {
        match self {
            Gate::Att(g) => g.forward(embeddings),
            Gate::Cat(g) => g.forward(embeddings),
        }
    }
}

impl Module for Gate {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, Role)) {
        match self {
            Gate::Att(g) => g.visit(prefix, f),
            Gate::Cat(g) => g.visit(prefix, f),
        }
    }
}

/// Convex combination of expert logits: `Σ_i α_i z_i`, shape `[B, 2]`.
pub fn fuse(alpha: &Tensor, logits: &[Tensor]) -> Result<Tensor> {
    let &[b, n] = alpha.shape() else {
        return Err(Error::data(format!("weights must be [B, N], got {:?}", alpha.shape())));
    };
    if logits.len() != n {
        return Err(Error::data(format!("{n} weights for {} experts", logits.len())));
    }
    let rows = logits
        .iter()
        .map(|z| Ok(ops::reshape(z, &[b, 1, 2])?))
        .collect::<Result<Vec<_>>>()?;
    let z = ops::concat(&rows, 1)?;
    let fused = ops::bmm(&ops::reshape(alpha, &[b, 1, n])?, &z)?;
    Ok(ops::reshape(&fused, &[b, 2])?)
}

/// Fake-class posterior of each row of `[B, 2]` logits.
pub fn fake_scores(logits: &Tensor) -> Result<Vec<f64>> {
    let p = moed_tensor::no_grad(|| ops::softmax(logits, 1))?;
    Ok(p.values().chunks(2).map(|r| r[FAKE]).collect())
}

#[derive(Debug, Clone)]
pub struct MoEOutput {
    /// `[B, N]`, rows on the simplex.
    pub alpha: Tensor,
    /// `[B, 2]`
    pub fused_logits: Tensor,
    /// Per-expert embeddings and logits.
    pub experts: Vec<ExpertOutput>,
}

impl MoEOutput {
    /// ŷ per input: fake-class probability of the fused logits.
    pub fn scores(&self) -> Result<Vec<f64>> {
        fake_scores(&self.fused_logits)
    }
}

#[derive(Debug, Clone)]
pub struct MoEModel {
    pub experts: Vec<Expert>,
    pub gate: Gate,
}

impl MoEModel {
    pub fn new(experts: Vec<Expert>, gate: Gate) -> Result<Self> {
        if experts.len() != gate.n_experts() {
            return Err(Error::config(format!(
                "{} experts but the gate expects {}",
                experts.len(),
                gate.n_experts()
            )));
        }
        Ok(MoEModel { experts, gate })
    }

    /// Attaches a freshly initialized gate of the given variant.
    pub fn with_new_gate(experts: Vec<Expert>, variant: GateVariant, cfg: &GatingConfig, rng: &mut impl Rng) -> Result<Self> {
        let dims: Vec<usize> = experts.iter().map(Expert::embed_dim).collect();
        let gate = Gate::new(variant, cfg, &dims, rng)?;
        MoEModel::new(experts, gate)
    }

    pub fn n_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn feature_kinds(&self) -> BTreeSet<FeatureKind> {
        self.experts.iter().map(Expert::feature_kind).collect()
    }

    pub fn forward(&self, features: &FeatureSet, train: bool) -> Result<MoEOutput> {
        self.forward_with_alpha(features, train, None)
    }

    /// Like [`forward`](Self::forward); a given `alpha` (`[B, N]`) replaces
    /// the gate output in the fusion step.
    pub fn forward_with_alpha(&self, features: &FeatureSet, train: bool, alpha: Option<&Tensor>) -> Result<MoEOutput> {
        let experts = self
            .experts
            .iter()
            .map(|e| e.forward(features.get(e.feature_kind())?, train))
            .collect::<Result<Vec<_>>>()?;
        let alpha = match alpha {
            Some(a) => a.clone(),
            None => {
                let embeddings: Vec<Tensor> = experts.iter().map(|o| o.embedding.clone()).collect();
                self.gate.forward(&embeddings)?
            }
        };
        let logits: Vec<Tensor> = experts.iter().map(|o| o.logits.clone()).collect();
        let fused_logits = fuse(&alpha, &logits)?;
        Ok(MoEOutput {
            alpha,
            fused_logits,
            experts,
        })
    }

    /// The same model with experts reordered so that slot `i` holds expert
    /// `perm[i]`. Only the attention gate is order-agnostic.
    pub fn reordered(&self, perm: &[usize]) -> Result<MoEModel> {
        let mut sorted = perm.to_vec();
        sorted.sort_unstable();
        if sorted != (0..self.n_experts()).collect::<Vec<_>>() {
            return Err(Error::config(format!("{perm:?} is not a permutation of the experts")));
        }
        let Gate::Att(gate) = &self.gate else {
            return Err(Error::config("only the attention gate can be reordered"));
        };
        MoEModel::new(
            perm.iter().map(|&p| self.experts[p].clone()).collect(),
            Gate::Att(gate.reordered(perm)),
        )
    }

    /// Scores one fixed-length waveform: returns ŷ, the expert weights and
    /// the per-expert outputs.
    pub fn score_waveform(&self, w: &Waveform, fc: &FeatureConfig) -> Result<(f64, Vec<f64>, Vec<ExpertOutput>)> {
        if w.len() != fc.input_len {
            return Err(Error::data(format!(
                "waveform has {} samples, expected {}",
                w.len(),
                fc.input_len
            )));
        }
        let mut set = FeatureSet::new();
        for kind in self.feature_kinds() {
            set.insert(FeatureBatch::single(kind, &audio::extract(&w.samples, fc, kind)?)?)?;
        }
        let out = moed_tensor::no_grad(|| self.forward(&set, false))?;
        Ok((out.scores()?[0], out.alpha.to_vec(), out.experts))
    }
}

impl Module for MoEModel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, Role)) {
        for (i, e) in self.experts.iter().enumerate() {
            e.visit(&moed_tensor::nn::join(prefix, &format!("expert.{i}")), f);
        }
        self.gate.visit(&moed_tensor::nn::join(prefix, "gate"), f);
    }
}

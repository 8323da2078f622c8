//! Expert detectors: a light CNN with max-feature-map activations and a
//! small residual network. Each maps a `[B, 1, F, T]` feature batch to an
//! embedding and two-class logits.

mod lcnn;
mod resnet;

use std::collections::BTreeMap;
use std::fmt;

use moed_tensor::nn::{join, Linear, Module, Role};
use moed_tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{FeatureConfig, FeatureKind};
use crate::error::{Error, Result};

pub use lcnn::Lcnn;
pub use resnet::{BasicBlock, ResNet};

/// Class index of bona fide speech.
pub const REAL: usize = 0;
/// Class index of synthetic speech; the positive class throughout.
pub const FAKE: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Lcnn,
    Resnet,
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Lcnn => "lcnn",
            Arch::Resnet => "resnet",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertConfig {
    pub arch: Arch,
    pub feature: FeatureKind,
    pub width_scale: f64,
    pub embed_dim: usize,
}

impl ExpertConfig {
    pub const fn new(arch: Arch, feature: FeatureKind) -> Self {
        ExpertConfig {
            arch,
            feature,
            width_scale: 1.0,
            embed_dim: 64,
        }
    }

    /// LCNN on mel, ResNet on mel, ResNet on linear.
    pub fn default_set() -> Vec<ExpertConfig> {
        vec![
            ExpertConfig::new(Arch::Lcnn, FeatureKind::Mel),
            ExpertConfig::new(Arch::Resnet, FeatureKind::Mel),
            ExpertConfig::new(Arch::Resnet, FeatureKind::Linear),
        ]
    }

    /// Short human-readable name, e.g. `lcnn-mel`.
    pub fn label(&self) -> String {
        format!("{}-{}", self.arch, self.feature)
    }

    pub(crate) fn channels(&self, base: &[usize]) -> Result<Vec<usize>> {
        if !(self.width_scale > 0.0 && self.width_scale.is_finite()) {
            return Err(Error::config(format!("width_scale must be positive, got {}", self.width_scale)));
        }
        base.iter()
            .map(|&b| {
                let c = (b as f64 * self.width_scale).round() as usize;
                if c == 0 {
                    Err(Error::config(format!(
                        "width_scale {} reduces a {b}-channel layer to zero",
                        self.width_scale
                    )))
                } else {
                    Ok(c)
                }
            })
            .collect()
    }
}

/// A batch of feature maps of one kind, `[B, 1, F, T]`.
#[derive(Debug, Clone)]
pub struct FeatureBatch {
    pub kind: FeatureKind,
    pub data: Tensor,
}

impl FeatureBatch {
    pub fn new(kind: FeatureKind, data: Tensor) -> Result<Self> {
        if data.rank() != 4 || data.shape()[1] != 1 {
            return Err(Error::data(format!("feature batch must be [B, 1, F, T], got {:?}", data.shape())));
        }
        Ok(FeatureBatch { kind, data })
    }

    /// Wraps a single `[F, T]` map as a batch of one.
    pub fn single(kind: FeatureKind, map: &Tensor) -> Result<Self> {
        let &[f, t] = map.shape() else {
            return Err(Error::data(format!("expected a [bins, frames] map, got {:?}", map.shape())));
        };
        FeatureBatch::new(kind, Tensor::new(&[1, 1, f, t], map.to_vec())?)
    }

    pub fn batch_size(&self) -> usize {
        self.data.shape()[0]
    }
}

/// Feature batches of several kinds describing the same inputs.
#[derive(Debug, Clone, Default)]
pub struct FeatureSet {
    batches: BTreeMap<FeatureKind, FeatureBatch>,
}

impl FeatureSet {
    pub fn new() -> Self {
        FeatureSet::default()
    }

    pub fn insert(&mut self, batch: FeatureBatch) -> Result<()> {
        if let Some(b) = self.batches.values().next() {
            if b.batch_size() != batch.batch_size() {
                return Err(Error::data(format!(
                    "feature batches disagree on batch size: {} vs {}",
                    b.batch_size(),
                    batch.batch_size()
                )));
            }
        }
        self.batches.insert(batch.kind, batch);
        Ok(())
    }

    pub fn get(&self, kind: FeatureKind) -> Result<&FeatureBatch> {
        self.batches.get(&kind).ok_or_else(|| Error::Routing {
            expected: kind.to_string(),
            got: format!("{:?}", self.batches.keys().collect::<Vec<_>>()),
        })
    }

    pub fn batch_size(&self) -> usize {
        self.batches.values().next().map_or(0, FeatureBatch::batch_size)
    }
}

impl From<FeatureBatch> for FeatureSet {
    fn from(batch: FeatureBatch) -> Self {
        let mut set = FeatureSet::new();
        set.batches.insert(batch.kind, batch);
        set
    }
}

/// Per-input expert result: penultimate activations and unnormalized logits.
#[derive(Debug, Clone)]
pub struct ExpertOutput {
    /// `[B, embed_dim]`
    pub embedding: Tensor,
    /// `[B, 2]`
    pub logits: Tensor,
}

#[derive(Debug, Clone)]
enum Body {
    Lcnn(Lcnn),
    Resnet(ResNet),
}

#[derive(Debug, Clone)]
pub struct Expert {
    pub config: ExpertConfig,
    bins: usize,
    body: Body,
    /// Final affine layer, embedding to logits.
    pub head: Linear,
}

/// Builds an expert for feature maps shaped by `features`.
pub fn build_expert(cfg: &ExpertConfig, features: &FeatureConfig, rng: &mut impl Rng) -> Result<Expert> {
    if cfg.embed_dim == 0 {
        return Err(Error::config("embed_dim must be positive"));
    }
    let bins = features.bins(cfg.feature);
    let body = match cfg.arch {
        Arch::Lcnn => Body::Lcnn(Lcnn::new(cfg, bins, rng)?),
        Arch::Resnet => Body::Resnet(ResNet::new(cfg, bins, rng)?),
    };
    Ok(Expert {
        config: *cfg,
        bins,
        body,
        head: Linear::scaled_uniform(cfg.embed_dim, 2, rng),
    })
}

impl Expert {
    pub fn feature_kind(&self) -> FeatureKind {
        self.config.feature
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    /// Batch norm uses batch statistics when `train` and running statistics
    /// otherwise.
    pub fn forward(&self, batch: &FeatureBatch, train: bool) -> Result<ExpertOutput> {
        if batch.kind != self.config.feature {
            return Err(Error::Routing {
                expected: self.config.feature.to_string(),
                got: batch.kind.to_string(),
            });
        }
        if batch.data.shape()[2] != self.bins {
            return Err(Error::data(format!(
                "{} expert expects {} frequency bins, got {}",
                self.config.label(),
                self.bins,
                batch.data.shape()[2]
            )));
        }
        let embedding = match &self.body {
            Body::Lcnn(m) => m.embed(&batch.data)?,
            Body::Resnet(m) => m.embed(&batch.data, train)?,
        };
        let logits = self.head.forward(&embedding)?;
        Ok(ExpertOutput { embedding, logits })
    }
}

impl Module for Expert {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, Role)) {
        let body = join(prefix, "body");
        match &self.body {
            Body::Lcnn(m) => m.visit(&body, f),
            Body::Resnet(m) => m.visit(&body, f),
        }
        self.head.visit(&join(prefix, "head"), f);
    }
}

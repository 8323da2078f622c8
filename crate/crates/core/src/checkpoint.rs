//! Saving and restoring trained detectors with enough metadata to rebuild
//! them and to refuse a configuration they were not trained under.

use std::path::Path;

use moed_tensor::checkpoint::{self, Entry};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::{FeatureConfig, FeatureKind};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::experts::{build_expert, Arch, Expert, ExpertConfig, FeatureSet};
use crate::gating::GatingConfig;
use crate::moe::{fake_scores, Gate, GateVariant, MoEModel};
use crate::training::{Partitioning, Trainable};

const FEATURES_META: &str = "features.meta";
const MOE_META: &str = "moe.meta";

fn features_meta(fc: &FeatureConfig) -> Entry {
    Entry::from_values(
        FEATURES_META,
        &[fc.input_len as f64, fc.n_fft as f64, fc.hop as f64, fc.n_mels as f64],
    )
}

fn expert_meta(name: &str, c: &ExpertConfig) -> Entry {
    let arch = match c.arch {
        Arch::Lcnn => 0.0,
        Arch::Resnet => 1.0,
    };
    let feature = match c.feature {
        FeatureKind::Mel => 0.0,
        FeatureKind::Linear => 1.0,
    };
    Entry::from_values(name, &[arch, feature, c.width_scale, c.embed_dim as f64])
}

fn find<'a>(entries: &'a [Entry], name: &str) -> Result<&'a Entry> {
    entries
        .iter()
        .find(|e| e.name == name)
        .ok_or_else(|| Error::Mismatch(format!("checkpoint lacks {name}")))
}

fn meta(entries: &[Entry], name: &str, len: usize) -> Result<Vec<f64>> {
    let v = find(entries, name)?.values_f64();
    if v.len() != len {
        return Err(Error::Mismatch(format!("{name} has {} fields, expected {len}", v.len())));
    }
    Ok(v)
}

fn parse_expert(entries: &[Entry], name: &str) -> Result<ExpertConfig> {
    let v = meta(entries, name, 4)?;
    let arch = match v[0] as u32 {
        0 => Arch::Lcnn,
        1 => Arch::Resnet,
        other => return Err(Error::Mismatch(format!("unknown architecture code {other}"))),
    };
    let feature = match v[1] as u32 {
        0 => FeatureKind::Mel,
        1 => FeatureKind::Linear,
        other => return Err(Error::Mismatch(format!("unknown feature code {other}"))),
    };
    // Stored as f32; round back to the nearest f64 decimal the config would hold.
    let width_scale = format!("{}", v[2] as f32).parse().expect("f32 prints as a float");
    Ok(ExpertConfig {
        arch,
        feature,
        width_scale,
        embed_dim: v[3] as usize,
    })
}

fn check_features(entries: &[Entry], fc: &FeatureConfig) -> Result<()> {
    let stored = meta(entries, FEATURES_META, 4)?;
    if stored != features_meta(fc).values_f64() {
        return Err(Error::Mismatch(format!(
            "checkpoint features (input_len, n_fft, hop, n_mels) = {stored:?} differ from the configuration"
        )));
    }
    Ok(())
}

fn rebuild_expert(entries: &[Entry], prefix: &str, fc: &FeatureConfig) -> Result<Expert> {
    let spec = parse_expert(entries, &format!("{prefix}.meta"))?;
    let expert = build_expert(&spec, fc, &mut ChaCha8Rng::seed_from_u64(0))?;
    checkpoint::load_module(&expert, prefix, entries)?;
    Ok(expert)
}

/// A trained model ready for scoring.
#[derive(Debug, Clone)]
pub enum Detector {
    Expert(Expert),
    MoE {
        model: MoEModel,
        partitioning: Partitioning,
    },
}

impl Detector {
    pub fn feature_kinds(&self) -> std::collections::BTreeSet<FeatureKind> {
        match self {
            Detector::Expert(e) => e.feature_kinds(),
            Detector::MoE { model, .. } => model.feature_kinds(),
        }
    }

    /// Fake-class posteriors in evaluation mode.
    pub fn scores(&self, features: &FeatureSet) -> Result<Vec<f64>> {
        moed_tensor::no_grad(|| {
            let logits = match self {
                Detector::Expert(e) => e.logits(features, false)?,
                Detector::MoE { model, .. } => model.logits(features, false)?,
            };
            fake_scores(&logits)
        })
    }

    /// `lcnn-mel`, `mile-att`, ...
    pub fn system_name(&self) -> String {
        match self {
            Detector::Expert(e) => e.config.label(),
            Detector::MoE { model, partitioning } => format!("{partitioning}-{}", model.gate.variant()),
        }
    }
}

pub fn save_expert(path: impl AsRef<Path>, expert: &Expert, fc: &FeatureConfig) -> Result<()> {
    let mut entries = vec![features_meta(fc), expert_meta("expert.meta", &expert.config)];
    entries.extend(checkpoint::module_entries(expert, "expert"));
    Ok(checkpoint::save(path, &entries)?)
}

pub fn save_moe(path: impl AsRef<Path>, model: &MoEModel, partitioning: Partitioning, fc: &FeatureConfig, gate: &GatingConfig) -> Result<()> {
    let variant = match model.gate.variant() {
        GateVariant::Att => 0.0,
        GateVariant::Cat => 1.0,
    };
    let part = match partitioning {
        Partitioning::Mile => 0.0,
        Partitioning::Mele => 1.0,
    };
    let mut entries = vec![
        features_meta(fc),
        Entry::from_values(
            MOE_META,
            &[
                variant,
                part,
                model.n_experts() as f64,
                gate.layers as f64,
                gate.heads as f64,
                gate.model_dim as f64,
                gate.mlp_dim as f64,
            ],
        ),
    ];
    for (i, e) in model.experts.iter().enumerate() {
        entries.push(expert_meta(&format!("expert.{i}.meta"), &e.config));
    }
    entries.extend(checkpoint::module_entries(model, ""));
    Ok(checkpoint::save(path, &entries)?)
}

/// Loads a single-expert checkpoint.
pub fn load_expert(path: impl AsRef<Path>, fc: &FeatureConfig) -> Result<Expert> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::Missing(path.to_path_buf()));
    }
    let entries = checkpoint::load(path)?;
    check_features(&entries, fc)?;
    rebuild_expert(&entries, "expert", fc)
}

/// Loads any checkpoint written by this module, checking it against `cfg`:
/// feature geometry, expert count and gate shape must agree.
pub fn load(path: impl AsRef<Path>, cfg: &Config) -> Result<Detector> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::Missing(path.to_path_buf()));
    }
    let entries = checkpoint::load(path)?;
    check_features(&entries, &cfg.features)?;
    if entries.iter().all(|e| e.name != MOE_META) {
        return Ok(Detector::Expert(rebuild_expert(&entries, "expert", &cfg.features)?));
    }
    let m = meta(&entries, MOE_META, 7)?;
    let variant = if m[0] == 0.0 { GateVariant::Att } else { GateVariant::Cat };
    let partitioning = if m[1] == 0.0 { Partitioning::Mile } else { Partitioning::Mele };
    let n = m[2] as usize;
    let expected = match partitioning {
        Partitioning::Mile => cfg.experts.len(),
        Partitioning::Mele => cfg.mele_experts.len(),
    };
    if n != expected {
        return Err(Error::Mismatch(format!(
            "checkpoint holds {n} experts, configuration expects {expected}"
        )));
    }
    let gate_cfg = GatingConfig {
        layers: m[3] as usize,
        heads: m[4] as usize,
        model_dim: m[5] as usize,
        mlp_dim: m[6] as usize,
    };
    if variant == GateVariant::Att && gate_cfg != cfg.gate {
        return Err(Error::Mismatch(format!("checkpoint gate {gate_cfg:?} differs from {:?}", cfg.gate)));
    }
    let experts = (0..n)
        .map(|i| rebuild_expert(&entries, &format!("expert.{i}"), &cfg.features))
        .collect::<Result<Vec<_>>>()?;
    let dims: Vec<usize> = experts.iter().map(Expert::embed_dim).collect();
    let gate = Gate::new(variant, &gate_cfg, &dims, &mut ChaCha8Rng::seed_from_u64(0))?;
    checkpoint::load_module(&gate, "gate", &entries)?;
    let model = MoEModel::new(experts, gate)?;
    Ok(Detector::MoE { model, partitioning })
}

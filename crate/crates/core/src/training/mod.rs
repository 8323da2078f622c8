//! Two-stage training: experts alone, then experts and gate jointly.

mod data;

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use moed_tensor::nn::{Module, Role};
use moed_tensor::optim::{AdamW, AdamWConfig, CosineSchedule};
use moed_tensor::{ops, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::FeatureKind;
use crate::config::Config;
use crate::corpus::Split;
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::experts::{build_expert, Expert, FeatureSet};
use crate::moe::{GateVariant, MoEModel};

pub use data::{balanced_batches, AugmentConfig, Dataset, Item};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Joint,
}

/// How the problem space is split among experts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partitioning {
    /// Every expert pre-trains on the pooled training set.
    Mile,
    /// Expert `i` pre-trains on known domain `i` only.
    Mele,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Pretrain => "pretrain",
            Stage::Joint => "joint",
        })
    }
}

impl fmt::Display for Partitioning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Partitioning::Mile => "mile",
            Partitioning::Mele => "mele",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: Stage,
    pub partitioning: Partitioning,
    pub gate_variant: GateVariant,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub label_smoothing: f64,
    pub seed: u64,
    pub augmentation: bool,
    /// Batch size for validation passes.
    pub eval_batch_size: usize,
}

impl TrainConfig {
    pub fn pretrain() -> Self {
        TrainConfig {
            stage: Stage::Pretrain,
            partitioning: Partitioning::Mile,
            gate_variant: GateVariant::Att,
            max_epochs: 100,
            patience: 20,
            batch_size: 256,
            lr_max: 1e-4,
            lr_min: 1e-6,
            weight_decay: 0.01,
            label_smoothing: 0.2,
            seed: 0,
            augmentation: true,
            eval_batch_size: 64,
        }
    }

    pub fn joint() -> Self {
        TrainConfig {
            stage: Stage::Joint,
            max_epochs: 50,
            patience: 10,
            batch_size: 128,
            ..TrainConfig::pretrain()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.batch_size % 2 != 0 {
            return Err(Error::config(format!("batch_size {} must be even and positive", self.batch_size)));
        }
        if self.max_epochs == 0 || self.patience == 0 || self.eval_batch_size == 0 {
            return Err(Error::config("max_epochs, patience and eval_batch_size must be positive"));
        }
        if !(self.lr_max > 0.0 && self.lr_min >= 0.0 && self.lr_min <= self.lr_max) {
            return Err(Error::config(format!("need 0 <= lr_min <= lr_max, 0 < lr_max ({} / {})", self.lr_min, self.lr_max)));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::config(format!("label_smoothing {} outside [0, 1)", self.label_smoothing)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config(format!("weight_decay {} is negative", self.weight_decay)));
        }
        Ok(())
    }

    fn expect_stage(&self, stage: Stage) -> Result<()> {
        if self.stage != stage {
            return Err(Error::config(format!("{stage} called with a {} config", self.stage)));
        }
        self.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Rate used by the last optimizer step of the epoch.
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub name: String,
    pub initial_val_loss: f64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop_reason: StopReason,
    pub steps_per_epoch: usize,
    /// Learning rate of every optimizer step, in order.
    pub lr_trace: Vec<f64>,
    /// Domains of every item read for training or validation.
    pub domains_seen: BTreeSet<String>,
}

impl RunRecord {
    /// One JSON object per epoch.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for e in &self.epochs {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    /// The record with wall-clock fields zeroed.
    pub fn without_timing(&self) -> RunRecord {
        let mut r = self.clone();
        r.epochs.iter_mut().for_each(|e| e.seconds = 0.0);
        r
    }
}

/// Indices of the items a model fits on and is validated against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

impl TrainSplit {
    /// Train and dev splits of the given domains, or of all domains.
    pub fn of(data: &Dataset, domains: Option<&[String]>) -> Result<Self> {
        let split = TrainSplit {
            train: data.indices(Split::Train, domains),
            val: data.indices(Split::Dev, domains),
        };
        if split.train.is_empty() || split.val.is_empty() {
            return Err(Error::data(format!(
                "no train/dev items for domains {:?}",
                domains.unwrap_or(&[])
            )));
        }
        Ok(split)
    }
}

/// A model with `[B, 2]` class logits.
pub trait Trainable: Module {
    fn feature_kinds(&self) -> BTreeSet<FeatureKind>;
    fn logits(&self, features: &FeatureSet, train: bool) -> Result<Tensor>;
}

impl Trainable for Expert {
    fn feature_kinds(&self) -> BTreeSet<FeatureKind> {
        BTreeSet::from([self.feature_kind()])
    }

    fn logits(&self, features: &FeatureSet, train: bool) -> Result<Tensor> {
        Ok(self.forward(features.get(self.feature_kind())?, train)?.logits)
    }
}

impl Trainable for MoEModel {
    fn feature_kinds(&self) -> BTreeSet<FeatureKind> {
        MoEModel::feature_kinds(self)
    }

    fn logits(&self, features: &FeatureSet, train: bool) -> Result<Tensor> {
        Ok(self.forward(features, train)?.fused_logits)
    }
}

/// Test hooks for the joint stage.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct JointHooks {
    /// Only gate parameters are optimized.
    pub freeze_experts: bool,
    /// Replaces the gate output by these per-expert weights.
    pub forced_alpha: Option<Vec<f64>>,
}

struct Hooked<'a> {
    model: &'a MoEModel,
    alpha: Option<&'a [f64]>,
}

impl Module for Hooked<'_> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, Role)) {
        self.model.visit(prefix, f);
    }
}

impl Trainable for Hooked<'_> {
    fn feature_kinds(&self) -> BTreeSet<FeatureKind> {
        self.model.feature_kinds()
    }

    fn logits(&self, features: &FeatureSet, train: bool) -> Result<Tensor> {
        let Some(a) = self.alpha else {
            return self.model.logits(features, train);
        };
        let b = features.batch_size();
        let alpha = Tensor::new(&[b, a.len()], a.repeat(b))?;
        Ok(self.model.forward_with_alpha(features, train, Some(&alpha))?.fused_logits)
    }
}

/// Mean smoothed cross-entropy of `model` on the given items.
pub fn batch_loss(model: &dyn Trainable, data: &Dataset, idx: &[usize], eps: f64, train: bool) -> Result<Tensor> {
    let features = data.batch(idx, &model.feature_kinds())?;
    let logits = model.logits(&features, train)?;
    Ok(ops::cross_entropy_smoothed(&logits, &data.labels(idx), eps)?)
}

/// Validation loss in evaluation mode, averaged over items.
pub fn evaluate_loss(model: &dyn Trainable, data: &Dataset, idx: &[usize], eps: f64, batch: usize) -> Result<f64> {
    if idx.is_empty() {
        return Err(Error::data("empty validation set"));
    }
    moed_tensor::no_grad(|| {
        let mut total = 0.0;
        for chunk in idx.chunks(batch) {
            total += batch_loss(model, data, chunk, eps, false)?.item() * chunk.len() as f64;
        }
        Ok(total / idx.len() as f64)
    })
}

fn snapshot(model: &dyn Module) -> Vec<Vec<f64>> {
    model.named_tensors("").iter().map(|(_, t, _)| t.to_vec()).collect()
}

fn restore(model: &dyn Module, saved: &[Vec<f64>]) -> Result<()> {
    for ((_, t, _), v) in model.named_tensors("").iter().zip(saved) {
        t.set_values(v.clone())?;
    }
    Ok(())
}

/// Minimizes smoothed cross-entropy over `params` with AdamW on a cosine
/// schedule spanning every step of `max_epochs`. Stops after `patience`
/// epochs without a validation improvement and restores the best epoch.
pub fn fit(
    name: &str,
    model: &dyn Trainable,
    params: Vec<Tensor>,
    data: &Dataset,
    split: &TrainSplit,
    cfg: &TrainConfig,
    augment: Option<&AugmentConfig>,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<RunRecord> {
    cfg.validate()?;
    if let Some(a) = augment {
        a.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, name));
    let train_labels = data.labels(&split.train);
    let steps_per_epoch = balanced_batches(&train_labels, cfg.batch_size, &mut rng.clone())?.len();
    let schedule = CosineSchedule::new(cfg.lr_max, cfg.lr_min, (cfg.max_epochs * steps_per_epoch) as u64);
    let mut opt = AdamW::new(
        params,
        AdamWConfig {
            weight_decay: cfg.weight_decay,
            ..AdamWConfig::default()
        },
    );
    let kinds = model.feature_kinds();
    let eps = cfg.label_smoothing;

    let domains_seen: BTreeSet<String> = split
        .train
        .iter()
        .chain(&split.val)
        .map(|&i| data.items[i].domain.clone())
        .collect();
    let initial_val_loss = evaluate_loss(model, data, &split.val, eps, cfg.eval_batch_size)?;
    let mut record = RunRecord {
        name: name.to_string(),
        initial_val_loss,
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stop_reason: StopReason::MaxEpochs,
        steps_per_epoch,
        lr_trace: Vec::new(),
        domains_seen,
    };
    let mut best_state = snapshot(model);
    let mut since_best = 0;

    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        let mut loss_sum = 0.0;
        let batches = balanced_batches(&train_labels, cfg.batch_size, &mut rng)?;
        for positions in &batches {
            let idx: Vec<usize> = positions.iter().map(|&p| split.train[p]).collect();
            let features = match augment.filter(|_| cfg.augmentation) {
                Some(a) => data.augmented_batch(&idx, &kinds, a, &mut rng)?,
                None => data.batch(&idx, &kinds)?,
            };
            opt.zero_grad();
            let loss = ops::cross_entropy_smoothed(&model.logits(&features, true)?, &data.labels(&idx), eps)?;
            let value = loss.item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step: opt.step,
                    value,
                });
            }
            loss.backward()?;
            let lr = schedule.lr(opt.step);
            opt.step(lr)?;
            record.lr_trace.push(lr);
            loss_sum += value;
        }
        let val_loss = evaluate_loss(model, data, &split.val, eps, cfg.eval_batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                step: opt.step,
                value: val_loss,
            });
        }
        let entry = EpochRecord {
            epoch,
            train_loss: loss_sum / batches.len() as f64,
            val_loss,
            lr: opt.lr,
            seconds: start.elapsed().as_secs_f64(),
        };
        progress(&entry);
        record.epochs.push(entry);
        if val_loss < record.best_val_loss {
            record.best_val_loss = val_loss;
            record.best_epoch = epoch;
            best_state = snapshot(model);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                record.stop_reason = StopReason::EarlyStop;
                break;
            }
        }
    }
    restore(model, &best_state)?;
    Ok(record)
}

/// Stage one: the expert alone on its logits.
pub fn pretrain_expert(
    name: &str,
    expert: &Expert,
    cfg: &TrainConfig,
    data: &Dataset,
    split: &TrainSplit,
    augment: Option<&AugmentConfig>,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<RunRecord> {
    cfg.expect_stage(Stage::Pretrain)?;
    fit(name, expert, expert.parameters(), data, split, cfg, augment, progress)
}

/// Stage two: pre-trained experts and a fresh gate on the fused logits.
#[allow(clippy::too_many_arguments)]
pub fn train_joint(
    name: &str,
    model: &MoEModel,
    cfg: &TrainConfig,
    data: &Dataset,
    split: &TrainSplit,
    augment: Option<&AugmentConfig>,
    hooks: &JointHooks,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<RunRecord> {
    cfg.expect_stage(Stage::Joint)?;
    if let Some(a) = &hooks.forced_alpha {
        if a.len() != model.n_experts() {
            return Err(Error::config(format!("{} forced weights for {} experts", a.len(), model.n_experts())));
        }
    }
    let params = if hooks.freeze_experts {
        model.gate.parameters()
    } else {
        model.parameters()
    };
    let hooked = Hooked {
        model,
        alpha: hooks.forced_alpha.as_deref(),
    };
    fit(name, &hooked, params, data, split, cfg, augment, progress)
}

/// Builds one expert per training domain from `cfg.mele_experts`, pre-trains
/// expert `i` on domain `i` alone and attaches a fresh gate.
pub fn assemble_mele(
    domains: &[String],
    cfg: &Config,
    variant: GateVariant,
    data: &Dataset,
    progress: &mut dyn FnMut(&str, &EpochRecord),
) -> Result<(MoEModel, Vec<RunRecord>)> {
    if domains.len() != cfg.mele_experts.len() {
        return Err(Error::config(format!(
            "{} training domains for {} domain experts",
            domains.len(),
            cfg.mele_experts.len()
        )));
    }
    let first = &cfg.mele_experts[0];
    if cfg.mele_experts.iter().any(|e| e != first) {
        return Err(Error::config("domain experts must share one architecture"));
    }
    let mut experts = Vec::new();
    let mut records = Vec::new();
    for (i, domain) in domains.iter().enumerate() {
        let expert = init_expert(cfg, Partitioning::Mele, i)?;
        let split = TrainSplit::of(data, Some(std::slice::from_ref(domain)))?;
        let name = format!("mele-expert-{i}");
        let rec = pretrain_expert(&name, &expert, &cfg.pretrain, data, &split, Some(&cfg.augment), &mut |e| progress(&name, e))?;
        experts.push(expert);
        records.push(rec);
    }
    let model = MoEModel::with_new_gate(experts, variant, &cfg.gate, &mut gate_rng(cfg, Partitioning::Mele, variant))?;
    Ok((model, records))
}

/// Freshly initialized expert `i` of the given partitioning.
pub fn init_expert(cfg: &Config, partitioning: Partitioning, i: usize) -> Result<Expert> {
    let spec = match partitioning {
        Partitioning::Mile => cfg.experts.get(i),
        Partitioning::Mele => cfg.mele_experts.get(i),
    }
    .ok_or_else(|| Error::config(format!("no {partitioning} expert {i}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("init/{partitioning}/expert-{i}")));
    build_expert(spec, &cfg.features, &mut rng)
}

/// Generator for the gate initialization of one grid cell.
pub fn gate_rng(cfg: &Config, partitioning: Partitioning, variant: GateVariant) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("init/{partitioning}-{variant}/gate")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::FeatureConfig;
    use crate::experts::{Arch, ExpertConfig};
    use crate::gating::GatingConfig;
    use std::collections::BTreeMap;

    /// Smallest geometry the LCNN accepts: 64 mel bins × 65 frames.
    fn toy_features() -> FeatureConfig {
        FeatureConfig {
            input_len: 1024,
            n_fft: 256,
            hop: 16,
            n_mels: 64,
            ..Default::default()
        }
    }

    /// Fakes carry a raised band in the upper half of the map.
    fn toy_dataset(per_class: usize, seed: u64) -> Dataset {
        use rand::Rng;
        let fc = toy_features();
        let (f, t) = (fc.bins(FeatureKind::Mel), fc.frames(fc.input_len));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut items = Vec::new();
        let mut maps = Vec::new();
        for split in Split::ALL {
            let n = if split == Split::Train { per_class } else { per_class / 2 };
            for label in [0, 1] {
                for i in 0..n {
                    items.push(Item {
                        id: format!("{split}/{label}/{i}"),
                        label,
                        domain: if i % 2 == 0 { "a".into() } else { "b".into() },
                        split,
                    });
                    maps.push(
                        (0..f * t)
                            .map(|k| rng.random_range(-1.0..1.0) + if label == 1 && k / t >= f / 2 { 1.5 } else { 0.0 })
                            .collect(),
                    );
                }
            }
        }
        Dataset::from_maps(items, fc, BTreeMap::from([(FeatureKind::Mel, maps)])).unwrap()
    }

    fn toy_expert(seed: u64) -> Expert {
        let cfg = ExpertConfig {
            width_scale: 0.25,
            embed_dim: 8,
            ..ExpertConfig::new(Arch::Lcnn, FeatureKind::Mel)
        };
        build_expert(&cfg, &toy_features(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn quick(stage: Stage, epochs: usize) -> TrainConfig {
        TrainConfig {
            stage,
            max_epochs: epochs,
            patience: epochs,
            batch_size: 8,
            lr_max: 3e-3,
            lr_min: 1e-4,
            augmentation: false,
            ..TrainConfig::pretrain()
        }
    }

    #[test]
    fn paper_defaults() {
        let p = TrainConfig::pretrain();
        assert_eq!((p.max_epochs, p.patience, p.batch_size), (100, 20, 256));
        let j = TrainConfig::joint();
        assert_eq!((j.max_epochs, j.patience, j.batch_size), (50, 10, 128));
        for c in [p, j] {
            assert_eq!(c.lr_max, 1e-4);
            assert_eq!(c.label_smoothing, 0.2);
        }
    }

    #[test]
    fn separable_toy_set_descends_and_is_reproducible() {
        let data = toy_dataset(16, 1);
        let split = TrainSplit::of(&data, None).unwrap();
        let run = |seed| {
            let e = toy_expert(seed);
            let rec = pretrain_expert("toy", &e, &quick(Stage::Pretrain, 6), &data, &split, None, &mut |_| {}).unwrap();
            (rec, e)
        };
        let (a, ea) = run(2);
        assert!(a.best_val_loss < a.initial_val_loss, "{a:?}");
        let (b, eb) = run(2);
        assert_eq!(a.without_timing(), b.without_timing());
        assert_eq!(snapshot(&ea), snapshot(&eb));
    }

    #[test]
    fn lr_trace_follows_the_cosine_formula() {
        let data = toy_dataset(8, 3);
        let split = TrainSplit::of(&data, None).unwrap();
        let cfg = quick(Stage::Pretrain, 3);
        let rec = pretrain_expert("lr", &toy_expert(0), &cfg, &data, &split, None, &mut |_| {}).unwrap();
        let total = (cfg.max_epochs * rec.steps_per_epoch) as f64;
        for (k, &lr) in rec.lr_trace.iter().enumerate() {
            let want = cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + (std::f64::consts::PI * k as f64 / total).cos());
            assert_eq!(lr, want);
        }
        assert_eq!(rec.lr_trace.len(), rec.epochs.len() * rec.steps_per_epoch);
    }

    #[test]
    fn flat_validation_stops_early_and_restores_best() {
        let data = toy_dataset(8, 4);
        let split = TrainSplit::of(&data, None).unwrap();
        let cfg = TrainConfig {
            max_epochs: 12,
            patience: 2,
            lr_max: 1e-300,
            lr_min: 1e-300,
            weight_decay: 0.0,
            ..quick(Stage::Pretrain, 12)
        };
        let e = toy_expert(5);
        let rec = pretrain_expert("flat", &e, &cfg, &data, &split, None, &mut |_| {}).unwrap();
        assert_eq!(rec.stop_reason, StopReason::EarlyStop);
        assert!(rec.epochs.len() < cfg.max_epochs);
        let min = rec.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(rec.epochs[rec.best_epoch - 1].val_loss, min);
        let restored = evaluate_loss(&e, &data, &split.val, cfg.label_smoothing, 64).unwrap();
        assert!((restored - rec.best_val_loss).abs() < 1e-12);
    }

    #[test]
    fn stage_mismatch_is_a_config_error() {
        let data = toy_dataset(4, 0);
        let split = TrainSplit::of(&data, None).unwrap();
        let r = pretrain_expert("x", &toy_expert(0), &quick(Stage::Joint, 1), &data, &split, None, &mut |_| {});
        assert!(matches!(r, Err(Error::Config(_))));
    }

    fn toy_moe(seed: u64) -> MoEModel {
        let experts = (0..2).map(|i| toy_expert(seed + i)).collect();
        let gate = GatingConfig {
            model_dim: 8,
            mlp_dim: 16,
            heads: 2,
            ..GatingConfig::default()
        };
        MoEModel::with_new_gate(experts, GateVariant::Att, &gate, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn joint_updates_gate_and_experts() {
        let data = toy_dataset(8, 6);
        let split = TrainSplit::of(&data, None).unwrap();
        let model = toy_moe(7);
        let gate_before = snapshot(&model.gate);
        let expert_before = snapshot(&model.experts[0]);
        train_joint("j", &model, &quick(Stage::Joint, 1), &data, &split, None, &JointHooks::default(), &mut |_| {}).unwrap();
        assert_ne!(snapshot(&model.gate), gate_before);
        assert_ne!(snapshot(&model.experts[0]), expert_before);
    }

    #[test]
    fn frozen_experts_with_uniform_gate_match_mean_logit_loss() {
        let data = toy_dataset(4, 8);
        let model = toy_moe(9);
        let idx: Vec<usize> = data.indices(Split::Train, None)[..4].to_vec();
        let hooked = Hooked {
            model: &model,
            alpha: Some(&[0.5, 0.5]),
        };
        let loss = moed_tensor::no_grad(|| batch_loss(&hooked, &data, &idx, 0.2, false)).unwrap().item();

        // Hand-assembled: average the two experts' logits, then smoothed CE.
        let features = data.batch(&idx, &BTreeSet::from([FeatureKind::Mel])).unwrap();
        let z: Vec<Vec<f64>> = model
            .experts
            .iter()
            .map(|e| e.forward(features.get(FeatureKind::Mel).unwrap(), false).unwrap().logits.to_vec())
            .collect();
        let mut want = 0.0;
        for (row, &label) in data.labels(&idx).iter().enumerate() {
            let m: Vec<f64> = (0..2).map(|c| 0.5 * (z[0][row * 2 + c] + z[1][row * 2 + c])).collect();
            let lse = (m[0].exp() + m[1].exp()).ln();
            for c in 0..2 {
                let q = 0.1 + if c == label { 0.8 } else { 0.0 };
                want -= q * (m[c] - lse);
            }
        }
        want /= idx.len() as f64;
        assert!((loss - want).abs() < 1e-12, "{loss} vs {want}");

        // Frozen experts stay bit-identical through a joint epoch.
        let split = TrainSplit::of(&data, None).unwrap();
        let before = snapshot(&model.experts[1]);
        let hooks = JointHooks {
            freeze_experts: true,
            forced_alpha: Some(vec![0.5, 0.5]),
        };
        train_joint("frozen", &model, &quick(Stage::Joint, 1), &data, &split, None, &hooks, &mut |_| {}).unwrap();
        let after: Vec<Vec<f64>> = model
            .experts[1]
            .named_tensors("")
            .iter()
            .filter(|(_, _, r)| *r == Role::Parameter)
            .map(|(_, t, _)| t.to_vec())
            .collect();
        let before_params: Vec<Vec<f64>> = model
            .experts[1]
            .named_tensors("")
            .iter()
            .zip(before)
            .filter(|((_, _, r), _)| *r == Role::Parameter)
            .map(|(_, v)| v)
            .collect();
        assert_eq!(after, before_params);
    }

    #[test]
    fn domain_restricted_split_only_touches_its_domain() {
        let data = toy_dataset(8, 10);
        let split = TrainSplit::of(&data, Some(&["a".to_string()])).unwrap();
        let rec = pretrain_expert("a-only", &toy_expert(1), &quick(Stage::Pretrain, 1), &data, &split, None, &mut |_| {}).unwrap();
        assert_eq!(rec.domains_seen, BTreeSet::from(["a".to_string()]));
    }
}

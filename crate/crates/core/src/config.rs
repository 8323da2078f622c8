//! The single JSON configuration document and its dotted-key overrides.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::audio::FeatureConfig;
use crate::corpus::CorpusConfig;
use crate::error::{Error, Result};
use crate::eval::DEFAULT_THRESHOLD;
use crate::experts::{Arch, ExpertConfig};
use crate::audio::FeatureKind;
use crate::gating::GatingConfig;
use crate::training::{AugmentConfig, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Scores at or above the threshold are classified fake.
    pub threshold: f64,
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            threshold: DEFAULT_THRESHOLD,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub features: FeatureConfig,
    /// Pooled-training expert set.
    pub experts: Vec<ExpertConfig>,
    /// One per training domain, all alike.
    pub mele_experts: Vec<ExpertConfig>,
    pub gate: GatingConfig,
    pub pretrain: TrainConfig,
    pub joint: TrainConfig,
    pub augment: AugmentConfig,
    pub corpus: CorpusConfig,
    pub eval: EvalConfig,
}

impl Default for Config {
    fn default() -> Self {
        let corpus = CorpusConfig::default();
        let known = corpus.domains.iter().filter(|d| !d.test_only).count();
        Config {
            seed: 0,
            features: FeatureConfig::default(),
            experts: ExpertConfig::default_set(),
            mele_experts: vec![ExpertConfig::new(Arch::Lcnn, FeatureKind::Mel); known],
            gate: GatingConfig::default(),
            pretrain: TrainConfig::pretrain(),
            joint: TrainConfig::joint(),
            augment: AugmentConfig::default(),
            corpus,
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Preset {
    /// Reference hyperparameters.
    #[default]
    Paper,
    /// Short schedules and small batches for a single CPU core.
    Desk,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
        })
    }
}

impl Config {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Paper => Config::default(),
            Preset::Desk => Config::desk(),
        }
    }

    /// Same model and corpus; schedules cut to minutes on one core.
    pub fn desk() -> Self {
        let base = Config::default();
        Config {
            pretrain: TrainConfig {
                max_epochs: 10,
                patience: 4,
                batch_size: 16,
                lr_max: 1e-3,
                lr_min: 1e-5,
                augmentation: false,
                ..base.pretrain
            },
            joint: TrainConfig {
                max_epochs: 5,
                patience: 3,
                batch_size: 32,
                lr_max: 3e-4,
                lr_min: 1e-5,
                augmentation: false,
                ..base.joint
            },
            ..base
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.gate.validate()?;
        self.pretrain.validate()?;
        self.joint.validate()?;
        self.augment.validate()?;
        self.corpus.validate()?;
        if self.experts.is_empty() || self.mele_experts.is_empty() {
            return Err(Error::config("expert lists must not be empty"));
        }
        if self.mele_experts.iter().any(|e| e != &self.mele_experts[0]) {
            return Err(Error::config("domain experts must share one architecture"));
        }
        if !(0.0..=1.0).contains(&self.eval.threshold) {
            return Err(Error::config(format!("threshold {} outside [0, 1]", self.eval.threshold)));
        }
        if self.eval.batch_size == 0 {
            return Err(Error::config("eval batch_size must be positive"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::Missing(path.to_path_buf()));
        }
        Config::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    /// Applies `key.path=value` overrides. Values parse as JSON and fall
    /// back to plain strings; keys must already exist.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut doc = serde_json::to_value(self)?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::config(format!("override {o:?} is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            *lookup(&mut doc, key)? = value;
        }
        serde_json::from_value(doc).map_err(|e| Error::config(format!("after overrides: {e}")))
    }
}

fn lookup<'a>(doc: &'a mut Value, key: &str) -> Result<&'a mut Value> {
    let mut node = doc;
    for part in key.split('.') {
        node = match node {
            Value::Object(map) => map.get_mut(part),
            Value::Array(items) => part.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| Error::config(format!("unknown config key {key:?}")))?;
    }
    Ok(node)
}

//! Synthetic multi-domain corpus: each domain pairs real-like utterances
//! with fakes carrying one characteristic artifact.

mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{wav, Waveform};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::experts::{FAKE, REAL};

pub use synth::{band_mirror, comb_notch, frame_discontinuity, synth_fake, synth_real, COMB_DELAY, SPLICE_PERIOD};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    CombNotch,
    FrameDiscontinuity,
    BandMirror,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Dev => self.dev,
            Split::Test => self.test,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.dev + self.test
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub name: String,
    pub artifact_kind: ArtifactKind,
    pub artifact_strength: f64,
    pub n_real: SplitCounts,
    pub n_fake: SplitCounts,
    /// Held out from training: every utterance lands in the test split.
    pub test_only: bool,
}

impl DomainSpec {
    /// `per_class` utterances of each class, split 80/10/10.
    pub fn known(name: &str, kind: ArtifactKind, strength: f64, per_class: usize) -> Self {
        let dev = per_class / 10;
        let counts = SplitCounts {
            train: per_class - 2 * dev,
            dev,
            test: dev,
        };
        DomainSpec {
            name: name.to_string(),
            artifact_kind: kind,
            artifact_strength: strength,
            n_real: counts,
            n_fake: counts,
            test_only: false,
        }
    }

    /// `per_class` utterances of each class, all in the test split.
    pub fn unknown(name: &str, kind: ArtifactKind, strength: f64, per_class: usize) -> Self {
        let counts = SplitCounts {
            train: 0,
            dev: 0,
            test: per_class,
        };
        DomainSpec {
            name: name.to_string(),
            artifact_kind: kind,
            artifact_strength: strength,
            n_real: counts,
            n_fake: counts,
            test_only: true,
        }
    }

    /// Utterances per split and class with test-only domains folded into test.
    fn count(&self, split: Split, label: usize) -> usize {
        let c = if label == REAL { &self.n_real } else { &self.n_fake };
        match (self.test_only, split) {
            (true, Split::Test) => c.total(),
            (true, _) => 0,
            (false, s) => c.get(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub duration_s: f64,
    pub domains: Vec<DomainSpec>,
}

impl Default for CorpusConfig {
    /// Three known domains with distinct artifacts plus one held-out domain,
    /// 200 four-second utterances each.
    fn default() -> Self {
        CorpusConfig {
            duration_s: 4.0,
            domains: vec![
                DomainSpec::known("comb", ArtifactKind::CombNotch, 0.6, 100),
                DomainSpec::known("splice", ArtifactKind::FrameDiscontinuity, 0.6, 100),
                DomainSpec::known("mirror", ArtifactKind::BandMirror, 0.6, 100),
                DomainSpec::unknown("comb-weak", ArtifactKind::CombNotch, 0.35, 100),
            ],
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.domains.len() < 2 {
            return Err(Error::config("a corpus needs at least two domains"));
        }
        let mut names = BTreeSet::new();
        for d in &self.domains {
            if !names.insert(d.name.as_str()) {
                return Err(Error::config(format!("duplicate domain name {:?}", d.name)));
            }
            if d.name.is_empty() || d.name.contains(['/', '\\']) {
                return Err(Error::config(format!("invalid domain name {:?}", d.name)));
            }
            if !(d.artifact_strength > 0.0 && d.artifact_strength <= 1.0) {
                return Err(Error::config(format!(
                    "domain {} strength {} outside (0, 1]",
                    d.name, d.artifact_strength
                )));
            }
            if !d.test_only {
                for split in Split::ALL {
                    if (d.count(split, REAL) == 0) != (d.count(split, FAKE) == 0) {
                        return Err(Error::config(format!("domain {} split {split} lacks a class", d.name)));
                    }
                }
            }
        }
        if self.domains.iter().all(|d| d.test_only) {
            return Err(Error::config("every domain is test-only"));
        }
        if !(1.0..=10.0).contains(&self.duration_s) {
            return Err(Error::config(format!("duration {} s outside [1, 10]", self.duration_s)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the corpus root.
    pub path: String,
    pub label: usize,
    pub domain: String,
    pub split: Split,
}

impl ManifestEntry {
    /// Stable utterance identifier: the path without extension.
    pub fn id(&self) -> &str {
        self.path.strip_suffix(".wav").unwrap_or(&self.path)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let path = root.join(MANIFEST_FILE);
        if !path.exists() {
            return Err(Error::Missing(path));
        }
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: ManifestEntry = serde_json::from_str(&line)
                .map_err(|err| Error::data(format!("{}:{}: {err}", path.display(), i + 1)))?;
            if e.label > 1 {
                return Err(Error::data(format!("{}:{}: label {}", path.display(), i + 1, e.label)));
            }
            entries.push(e);
        }
        Ok(CorpusManifest { root, entries })
    }

    pub fn save(&self) -> Result<PathBuf> {
        let path = self.root.join(MANIFEST_FILE);
        let mut w = BufWriter::new(File::create(&path)?);
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(path)
    }

    /// Domains in order of first appearance.
    pub fn domains(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.entries
            .iter()
            .filter(|e| seen.insert(e.domain.as_str()))
            .map(|e| e.domain.clone())
            .collect()
    }

    /// Domains with training data, in order of first appearance.
    pub fn known_domains(&self) -> Vec<String> {
        let trained: BTreeSet<&str> = self
            .entries
            .iter()
            .filter(|e| e.split == Split::Train)
            .map(|e| e.domain.as_str())
            .collect();
        self.domains().into_iter().filter(|d| trained.contains(d.as_str())).collect()
    }

    /// Domains that never appear in the training split.
    pub fn unknown_domains(&self) -> BTreeSet<String> {
        let known: BTreeSet<String> = self.known_domains().into_iter().collect();
        self.domains().into_iter().filter(|d| !known.contains(d)).collect()
    }

    /// `(domain, split) → (reals, fakes)`
    pub fn class_counts(&self) -> BTreeMap<(String, Split), (usize, usize)> {
        let mut out: BTreeMap<(String, Split), (usize, usize)> = BTreeMap::new();
        for e in &self.entries {
            let c = out.entry((e.domain.clone(), e.split)).or_default();
            if e.label == FAKE {
                c.1 += 1;
            } else {
                c.0 += 1;
            }
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for ((domain, split), (r, f)) in self.class_counts() {
            s.push_str(&format!("{domain:>12} {split:<5} real {r:>4} fake {f:>4}\n"));
        }
        s
    }
}

/// Synthesizes one utterance from its id alone.
pub fn synth_utterance(spec: &DomainSpec, label: usize, id: &str, duration_s: f64, corpus_seed: u64) -> Result<Waveform> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(corpus_seed, id));
    let carrier = synth_real(duration_s, &mut rng)?;
    if label == REAL {
        Ok(carrier)
    } else {
        synth_fake(&carrier, spec.artifact_kind, spec.artifact_strength, &mut rng)
    }
}

/// Writes every utterance as a WAV under `out_dir` plus `manifest.jsonl`.
/// Output bytes depend only on `cfg` and `seed`.
pub fn generate_corpus(cfg: &CorpusConfig, out_dir: impl AsRef<Path>, seed: u64) -> Result<CorpusManifest> {
    cfg.validate()?;
    let root = out_dir.as_ref().to_path_buf();
    fs::create_dir_all(&root)?;
    let mut entries = Vec::new();
    for d in &cfg.domains {
        for split in Split::ALL {
            let n = d.count(split, REAL).max(d.count(split, FAKE));
            if n == 0 {
                continue;
            }
            fs::create_dir_all(root.join(&d.name).join(split.to_string()))?;
            for label in [REAL, FAKE] {
                let tag = if label == REAL { "real" } else { "fake" };
                for i in 0..d.count(split, label) {
                    entries.push(ManifestEntry {
                        path: format!("{}/{split}/{tag}_{i:04}.wav", d.name),
                        label,
                        domain: d.name.clone(),
                        split,
                    });
                }
            }
        }
    }
    let specs: BTreeMap<&str, &DomainSpec> = cfg.domains.iter().map(|d| (d.name.as_str(), d)).collect();
    entries.par_iter().try_for_each(|e| -> Result<()> {
        let w = synth_utterance(specs[e.domain.as_str()], e.label, e.id(), cfg.duration_s, seed)?;
        wav::write(root.join(&e.path), &w)
    })?;
    let manifest = CorpusManifest { root, entries };
    manifest.save()?;
    Ok(manifest)
}

//! End-to-end operations over a corpus directory and an output directory:
//! training either stage, scoring a checkpoint, and tabulating systems.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Detector};
use crate::config::Config;
use crate::corpus::{generate_corpus, CorpusManifest, Split};
use crate::error::{Error, Result};
use crate::eval::{aggregate, ScoreSet, SystemReport};
use crate::moe::{GateVariant, MoEModel};
use crate::training::{
    gate_rng, init_expert, pretrain_expert, train_joint, Dataset, EpochRecord, JointHooks, Partitioning, RunRecord,
    TrainConfig, TrainSplit,
};

/// Writes the configured corpus under `dir`.
pub fn gen_data(cfg: &Config, dir: impl AsRef<Path>) -> Result<CorpusManifest> {
    cfg.corpus.validate()?;
    generate_corpus(&cfg.corpus, dir, cfg.seed)
}

/// File stem of a trained system inside the output directory.
pub fn expert_stem(partitioning: Partitioning, i: usize) -> String {
    match partitioning {
        Partitioning::Mile => format!("expert-{i}"),
        Partitioning::Mele => format!("mele-expert-{i}"),
    }
}

pub fn moe_stem(partitioning: Partitioning, variant: GateVariant) -> String {
    format!("{partitioning}-{variant}")
}

pub struct Pipeline {
    pub cfg: Config,
    pub manifest: CorpusManifest,
    pub out: PathBuf,
    /// Print one line per epoch to stderr.
    pub verbose: bool,
    data: OnceLock<Dataset>,
}

impl Pipeline {
    pub fn open(cfg: Config, data_dir: impl AsRef<Path>, out: impl AsRef<Path>) -> Result<Self> {
        cfg.validate()?;
        let manifest = CorpusManifest::load(data_dir)?;
        let out = out.as_ref().to_path_buf();
        fs::create_dir_all(out.join("logs"))?;
        Ok(Pipeline {
            cfg,
            manifest,
            out,
            verbose: false,
            data: OnceLock::new(),
        })
    }

    /// Every manifest entry featurized for every configured expert.
    pub fn dataset(&self) -> Result<&Dataset> {
        if let Some(d) = self.data.get() {
            return Ok(d);
        }
        let kinds: BTreeSet<_> = self.cfg.experts.iter().chain(&self.cfg.mele_experts).map(|e| e.feature).collect();
        let noise = self.cfg.pretrain.augmentation || self.cfg.joint.augmentation;
        let d = Dataset::load(&self.manifest, &self.cfg.features, &kinds, noise)?;
        Ok(self.data.get_or_init(|| d))
    }

    pub fn checkpoint_path(&self, stem: &str) -> PathBuf {
        self.out.join(format!("{stem}.ckpt"))
    }

    fn progress(&self, name: &str) -> impl FnMut(&EpochRecord) + '_ {
        let name = name.to_string();
        let verbose = self.verbose;
        move |e: &EpochRecord| {
            if verbose {
                eprintln!(
                    "[{name}] epoch {:>3}  train {:.4}  val {:.4}  lr {:.2e}  {:.1}s",
                    e.epoch, e.train_loss, e.val_loss, e.lr, e.seconds
                );
            }
        }
    }

    fn write_logs(&self, stem: &str, rec: &RunRecord) -> Result<()> {
        rec.write_jsonl(self.out.join("logs").join(format!("{stem}.jsonl")))?;
        rec.write_json(self.out.join("logs").join(format!("{stem}.run.json")))
    }

    fn stage_config(&self, base: &TrainConfig, partitioning: Partitioning, variant: Option<GateVariant>) -> TrainConfig {
        TrainConfig {
            partitioning,
            gate_variant: variant.unwrap_or(base.gate_variant),
            ..base.clone()
        }
    }

    /// Number of experts the partitioning trains; under domain partitioning
    /// it must equal the number of training domains.
    pub fn expert_count(&self, partitioning: Partitioning) -> Result<usize> {
        match partitioning {
            Partitioning::Mile => Ok(self.cfg.experts.len()),
            Partitioning::Mele => {
                let domains = self.manifest.known_domains();
                if domains.len() != self.cfg.mele_experts.len() {
                    return Err(Error::config(format!(
                        "{} training domains for {} domain experts",
                        domains.len(),
                        self.cfg.mele_experts.len()
                    )));
                }
                Ok(domains.len())
            }
        }
    }

    /// Stage one for one expert (or all when `which` is `None`). Writes
    /// `expert-{i}.ckpt` or `mele-expert-{i}.ckpt` plus logs.
    pub fn pretrain(&self, partitioning: Partitioning, which: Option<usize>) -> Result<Vec<RunRecord>> {
        let n = self.expert_count(partitioning)?;
        let indices: Vec<usize> = match which {
            Some(i) if i >= n => return Err(Error::config(format!("expert {i} out of range 0..{n}"))),
            Some(i) => vec![i],
            None => (0..n).collect(),
        };
        let cfg = self.stage_config(&self.cfg.pretrain, partitioning, None);
        let data = self.dataset()?;
        let domains = self.manifest.known_domains();
        let mut records = Vec::new();
        for i in indices {
            let stem = expert_stem(partitioning, i);
            let split = match partitioning {
                Partitioning::Mile => TrainSplit::of(data, Some(&domains))?,
                Partitioning::Mele => TrainSplit::of(data, Some(std::slice::from_ref(&domains[i])))?,
            };
            let expert = init_expert(&self.cfg, partitioning, i)?;
            let rec = pretrain_expert(&stem, &expert, &cfg, data, &split, Some(&self.cfg.augment), &mut self.progress(&stem))?;
            checkpoint::save_expert(self.checkpoint_path(&stem), &expert, &self.cfg.features)?;
            self.write_logs(&stem, &rec)?;
            records.push(rec);
        }
        Ok(records)
    }

    /// Stage two: loads the stage-one checkpoints, attaches a fresh gate and
    /// trains everything on the pooled set. Writes `{mile|mele}-{att|cat}.ckpt`.
    pub fn joint(&self, partitioning: Partitioning, variant: GateVariant) -> Result<RunRecord> {
        let n = self.expert_count(partitioning)?;
        let experts = (0..n)
            .map(|i| checkpoint::load_expert(self.checkpoint_path(&expert_stem(partitioning, i)), &self.cfg.features))
            .collect::<Result<Vec<_>>>()?;
        let model = MoEModel::with_new_gate(experts, variant, &self.cfg.gate, &mut gate_rng(&self.cfg, partitioning, variant))?;
        let cfg = self.stage_config(&self.cfg.joint, partitioning, Some(variant));
        let data = self.dataset()?;
        let split = TrainSplit::of(data, Some(&self.manifest.known_domains()))?;
        let stem = moe_stem(partitioning, variant);
        let rec = train_joint(
            &stem,
            &model,
            &cfg,
            data,
            &split,
            Some(&self.cfg.augment),
            &JointHooks::default(),
            &mut self.progress(&stem),
        )?;
        checkpoint::save_moe(self.checkpoint_path(&stem), &model, partitioning, &self.cfg.features, &self.cfg.gate)?;
        self.write_logs(&stem, &rec)?;
        Ok(rec)
    }

    /// Scores every item of `split` with the checkpoint.
    pub fn score(&self, detector: &Detector, split: Split) -> Result<(ScoreSet, Vec<String>)> {
        let data = self.dataset()?;
        let idx = data.indices(split, None);
        if idx.is_empty() {
            return Err(Error::data(format!("split {split} is empty")));
        }
        let kinds = detector.feature_kinds();
        let mut scores = Vec::with_capacity(idx.len());
        for chunk in idx.chunks(self.cfg.eval.batch_size) {
            scores.extend(detector.scores(&data.batch(chunk, &kinds)?)?);
        }
        let ids = idx.iter().map(|&i| data.items[i].id.clone()).collect();
        let domains = idx.iter().map(|&i| data.items[i].domain.clone()).collect();
        Ok((ScoreSet::new(ids, scores, data.labels(&idx))?, domains))
    }

    /// Writes `<out>/<stem>/report.json`, `scores.csv` and one
    /// `scores-<domain>.csv` per domain.
    pub fn evaluate(&self, ckpt: &Path, split: Split, threshold: f64, hard: bool) -> Result<SystemReport> {
        let detector = checkpoint::load(ckpt, &self.cfg)?;
        let (scores, domains) = self.score(&detector, split)?;
        let report = aggregate(
            &detector.system_name(),
            &split.to_string(),
            threshold,
            &scores,
            &domains,
            &self.manifest.unknown_domains(),
        )?;
        let stem = ckpt
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::config(format!("checkpoint path {} has no stem", ckpt.display())))?;
        let dir = self.out.join(stem);
        fs::create_dir_all(&dir)?;
        let hard = hard.then_some(threshold);
        scores.write_csv(dir.join("scores.csv"), hard)?;
        for d in report.domains.keys() {
            scores
                .filter(|i| &domains[i] == d)
                .write_csv(dir.join(format!("scores-{d}.csv")), hard)?;
        }
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
        Ok(report)
    }

    /// Every system the grid can produce, in table order.
    pub fn system_stems(&self) -> Vec<String> {
        let mut stems: Vec<String> = (0..self.cfg.experts.len()).map(|i| expert_stem(Partitioning::Mile, i)).collect();
        stems.extend((0..self.cfg.mele_experts.len()).map(|i| expert_stem(Partitioning::Mele, i)));
        for p in [Partitioning::Mele, Partitioning::Mile] {
            for v in [GateVariant::Cat, GateVariant::Att] {
                stems.push(moe_stem(p, v));
            }
        }
        stems
    }

    /// Collects `<out>/<stem>/report.json` for every system; missing ones
    /// become absent rows. Writes `compare.json` and `compare.txt`.
    pub fn compare(&self) -> Result<Comparison> {
        let unknown = self.manifest.unknown_domains();
        let mut columns: Vec<String> = self.manifest.known_domains();
        columns.extend(unknown.iter().cloned());
        let mut rows = Vec::new();
        for stem in self.system_stems() {
            let path = self.out.join(&stem).join("report.json");
            let report: Option<SystemReport> = if path.exists() {
                Some(serde_json::from_str(&fs::read_to_string(&path)?)?)
            } else {
                None
            };
            rows.push(CompareRow::new(stem, report.as_ref()));
        }
        let cmp = Comparison {
            columns,
            unknown: unknown.into_iter().collect(),
            rows,
        };
        fs::write(self.out.join("compare.json"), serde_json::to_string_pretty(&cmp)? + "\n")?;
        fs::write(self.out.join("compare.txt"), cmp.to_text())?;
        Ok(cmp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub stem: String,
    pub system: Option<String>,
    pub present: bool,
    /// Per-domain EER (%).
    pub eer: BTreeMap<String, f64>,
    pub known: Option<f64>,
    pub unknown: Option<f64>,
    pub overall: Option<f64>,
}

impl CompareRow {
    fn new(stem: String, report: Option<&SystemReport>) -> Self {
        match report {
            Some(r) => CompareRow {
                stem,
                system: Some(r.system.clone()),
                present: true,
                eer: r.domains.iter().map(|(d, e)| (d.clone(), e.eer)).collect(),
                known: r.known,
                unknown: r.unknown,
                overall: Some(r.overall.eer),
            },
            None => CompareRow {
                stem,
                system: None,
                present: false,
                eer: BTreeMap::new(),
                known: None,
                unknown: None,
                overall: None,
            },
        }
    }
}

/// EER table: one row per system, one column per domain plus aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// Domain columns, training domains first.
    pub columns: Vec<String>,
    pub unknown: Vec<String>,
    pub rows: Vec<CompareRow>,
}

impl Comparison {
    pub fn row(&self, stem: &str) -> Option<&CompareRow> {
        self.rows.iter().find(|r| r.stem == stem && r.present)
    }

    pub fn to_text(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"));
        let width = self.columns.iter().map(String::len).max().unwrap_or(0).max(7);
        let mut s = String::new();
        let _ = write!(s, "{:<16}{:<16}", "run", "system");
        for c in &self.columns {
            let mark = if self.unknown.contains(c) { "*" } else { "" };
            let _ = write!(s, " {:>width$}", format!("{c}{mark}"));
        }
        let _ = writeln!(s, " {:>width$} {:>width$} {:>width$}", "Known", "Unknown", "Overall");
        for r in &self.rows {
            let _ = write!(s, "{:<16}{:<16}", r.stem, r.system.as_deref().unwrap_or("(absent)"));
            for c in &self.columns {
                let _ = write!(s, " {:>width$}", cell(r.eer.get(c).copied()));
            }
            let _ = writeln!(
                s,
                " {:>width$} {:>width$} {:>width$}",
                cell(r.known),
                cell(r.unknown),
                cell(r.overall)
            );
        }
        s.push_str("EER (%), lower is better; * marks domains unseen in training.\n");
        s
    }
}

/// Runs the whole grid: individual experts, both gates under both
/// partitionings, and the test-split evaluation of every system.
pub fn run_grid(p: &Pipeline) -> Result<Comparison> {
    for part in [Partitioning::Mile, Partitioning::Mele] {
        p.pretrain(part, None)?;
        for v in [GateVariant::Cat, GateVariant::Att] {
            p.joint(part, v)?;
        }
    }
    for stem in p.system_stems() {
        p.evaluate(&p.checkpoint_path(&stem), Split::Test, p.cfg.eval.threshold, false)?;
    }
    p.compare()
}

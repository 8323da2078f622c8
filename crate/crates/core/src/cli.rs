//! Command-line front end. `run` returns errors; the binary maps them to
//! exit codes with [`Error::exit_code`].

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{Config, Preset};
use crate::corpus::Split;
use crate::error::{Error, Result};
use crate::moe::GateVariant;
use crate::pipeline::{gen_data, run_grid, Pipeline};
use crate::training::{Partitioning, Stage};

#[derive(Debug, Parser)]
#[command(name = "moed", version, about = "Mixture-of-experts speech deepfake detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON configuration; defaults to the selected preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base configuration when no file is given.
    #[arg(long, global = true, value_enum, default_value_t = Preset::Paper)]
    pub preset: Preset,
    /// Overrides the seed of the corpus, initialization and both stages.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Dotted-key override, e.g. `--set gate.layers=3`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Corpus directory holding manifest.jsonl.
    #[arg(long, global = true, default_value = "data")]
    pub data: PathBuf,
    /// Suppress per-epoch progress on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize the corpus into --out.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train one stage.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        stage: StageArg,
        /// Pre-train only this expert index.
        #[arg(long)]
        expert: Option<usize>,
        #[arg(long, value_enum)]
        partitioning: Option<PartitioningArg>,
        #[arg(long, value_enum)]
        gate: Option<GateArg>,
    },
    /// Score a checkpoint on one split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Decision threshold; defaults to the configured one.
        #[arg(long)]
        threshold: Option<f64>,
        /// Write binary decisions instead of posteriors to the score CSVs.
        #[arg(long)]
        hard: bool,
    },
    /// Tabulate every evaluated system found under --out.
    Compare {
        #[command(flatten)]
        common: Common,
    },
    /// Pre-train, train both gates under both partitionings, evaluate and compare.
    Grid {
        #[command(flatten)]
        common: Common,
    },
    /// Print the resolved configuration.
    Config {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum StageArg {
    Pretrain,
    Joint,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum PartitioningArg {
    Mile,
    Mele,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum GateArg {
    Att,
    Cat,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Pretrain => Stage::Pretrain,
            StageArg::Joint => Stage::Joint,
        }
    }
}

impl From<PartitioningArg> for Partitioning {
    fn from(p: PartitioningArg) -> Self {
        match p {
            PartitioningArg::Mile => Partitioning::Mile,
            PartitioningArg::Mele => Partitioning::Mele,
        }
    }
}

impl From<GateArg> for GateVariant {
    fn from(g: GateArg) -> Self {
        match g {
            GateArg::Att => GateVariant::Att,
            GateArg::Cat => GateVariant::Cat,
        }
    }
}

impl Common {
    /// Base config (file or preset), then `--seed`, then `--set` overrides.
    pub fn resolve(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(path) => Config::load(path)?,
            None => Config::preset(self.preset),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
            cfg.pretrain.seed = seed;
            cfg.joint.seed = seed;
        }
        let cfg = cfg.with_overrides(&self.overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn pipeline(&self) -> Result<Pipeline> {
        let mut p = Pipeline::open(self.resolve()?, &self.data, &self.out)?;
        p.verbose = !self.quiet;
        Ok(p)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common } => {
            let cfg = common.resolve()?;
            let manifest = gen_data(&cfg, &common.out)?;
            print!("{}", manifest.summary());
            println!("{}", manifest.root.join(crate::corpus::MANIFEST_FILE).display());
        }
        Command::Train {
            common,
            stage,
            expert,
            partitioning,
            gate,
        } => {
            let p = common.pipeline()?;
            match Stage::from(stage) {
                Stage::Pretrain => {
                    if gate.is_some() {
                        return Err(Error::config("--gate applies to the joint stage"));
                    }
                    let part = partitioning.map_or(p.cfg.pretrain.partitioning, Into::into);
                    for rec in p.pretrain(part, expert)? {
                        println!("{}: best epoch {} val {:.4} ({:?})", rec.name, rec.best_epoch, rec.best_val_loss, rec.stop_reason);
                    }
                }
                Stage::Joint => {
                    if expert.is_some() {
                        return Err(Error::config("--expert applies to the pretrain stage"));
                    }
                    let part = partitioning.map_or(p.cfg.joint.partitioning, Into::into);
                    let variant = gate.map_or(p.cfg.joint.gate_variant, Into::into);
                    let rec = p.joint(part, variant)?;
                    println!("{}: best epoch {} val {:.4} ({:?})", rec.name, rec.best_epoch, rec.best_val_loss, rec.stop_reason);
                }
            }
        }
        Command::Eval {
            common,
            checkpoint,
            split,
            threshold,
            hard,
        } => {
            let p = common.pipeline()?;
            let t = threshold.unwrap_or(p.cfg.eval.threshold);
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::config(format!("threshold {t} outside [0, 1]")));
            }
            let r = p.evaluate(&checkpoint, split, t, hard)?;
            for (d, e) in &r.domains {
                println!("{d:>12}  EER {:6.2}  BAC {:6.2}  TPR {:6.2}  TNR {:6.2}", e.eer, e.bac, e.tpr, e.tnr);
            }
            let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2}"));
            println!(
                "{}: known {}  unknown {}  overall {:.2}",
                r.system,
                opt(r.known),
                opt(r.unknown),
                r.overall.eer
            );
        }
        Command::Compare { common } => {
            let p = common.pipeline()?;
            print!("{}", p.compare()?.to_text());
        }
        Command::Grid { common } => {
            let p = common.pipeline()?;
            print!("{}", run_grid(&p)?.to_text());
        }
        Command::Config { common } => {
            println!("{}", common.resolve()?.to_json());
        }
    }
    Ok(())
}

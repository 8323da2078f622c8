//! Corpus, both training stages, evaluation and the comparison table on a
//! reduced configuration, through the same pipeline the CLI drives.

use moed::config::Config;
use moed::corpus::{ArtifactKind, CorpusConfig, DomainSpec, Split};
use moed::moe::GateVariant;
use moed::pipeline::{gen_data, Pipeline};
use moed::training::Partitioning;

fn main() -> moed::Result<()> {
    let mut cfg = Config::desk();
    cfg.features.input_len = 32_000;
    cfg.corpus = CorpusConfig {
        duration_s: 2.0,
        domains: vec![
            DomainSpec::known("comb", ArtifactKind::CombNotch, 0.6, 30),
            DomainSpec::known("splice", ArtifactKind::FrameDiscontinuity, 0.6, 30),
            DomainSpec::known("mirror", ArtifactKind::BandMirror, 0.6, 30),
            DomainSpec::unknown("comb-weak", ArtifactKind::CombNotch, 0.35, 10),
        ],
    };
    cfg.pretrain.max_epochs = 4;

    let dir = tempfile::tempdir()?;
    gen_data(&cfg, dir.path().join("data"))?;
    let p = Pipeline::open(cfg, dir.path().join("data"), dir.path().join("out"))?;
    p.pretrain(Partitioning::Mile, None)?;
    for variant in [GateVariant::Att, GateVariant::Cat] {
        let run = p.joint(Partitioning::Mile, variant)?;
        println!("{}: best val loss {:.4}", run.name, run.best_val_loss);
    }
    for stem in ["expert-0", "expert-1", "expert-2", "mile-cat", "mile-att"] {
        p.evaluate(&p.checkpoint_path(stem), Split::Test, p.cfg.eval.threshold, false)?;
    }
    print!("{}", p.compare()?.to_text());
    Ok(())
}

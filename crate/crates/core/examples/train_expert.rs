//! Pre-train one LCNN on a single synthetic domain and score its test split.

use std::collections::BTreeSet;

use moed::checkpoint::Detector;
use moed::config::Config;
use moed::corpus::{generate_corpus, ArtifactKind, CorpusConfig, DomainSpec, Split};
use moed::eval::{compute_eer, ScoreSet};
use moed::training::{init_expert, pretrain_expert, Dataset, Partitioning, TrainSplit};

fn main() -> moed::Result<()> {
    let mut cfg = Config::desk();
    cfg.corpus = CorpusConfig {
        domains: vec![
            DomainSpec::known("comb", ArtifactKind::CombNotch, 0.6, 40),
            DomainSpec::unknown("mirror", ArtifactKind::BandMirror, 0.6, 10),
        ],
        ..cfg.corpus
    };
    let dir = tempfile::tempdir()?;
    let manifest = generate_corpus(&cfg.corpus, dir.path(), cfg.seed)?;

    let expert = init_expert(&cfg, Partitioning::Mile, 0)?;
    let kinds = BTreeSet::from([expert.feature_kind()]);
    let data = Dataset::load(&manifest, &cfg.features, &kinds, false)?;
    let comb = ["comb".to_string()];
    let split = TrainSplit::of(&data, Some(&comb))?;
    let run = pretrain_expert("lcnn-mel", &expert, &cfg.pretrain, &data, &split, None, &mut |e| {
        println!("epoch {:>2}  train {:.4}  val {:.4}  lr {:.2e}", e.epoch, e.train_loss, e.val_loss, e.lr);
    })?;
    println!("kept epoch {} ({:?})", run.best_epoch, run.stop_reason);

    let detector = Detector::Expert(expert);
    for domain in ["comb", "mirror"] {
        let names = [domain.to_string()];
        let idx = data.indices(Split::Test, Some(&names));
        let scores = detector.scores(&data.batch(&idx, &kinds)?)?;
        let (eer, _) = compute_eer(&ScoreSet::unnamed(scores, data.labels(&idx))?)?;
        println!("{domain:>6} test EER {eer:.2}%");
    }
    Ok(())
}

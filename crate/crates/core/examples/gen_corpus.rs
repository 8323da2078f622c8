//! Synthesize a small multi-domain corpus and print its manifest summary.
//!
//!     cargo run --release --example gen_corpus -- /tmp/corpus

use moed::corpus::{generate_corpus, ArtifactKind, CorpusConfig, DomainSpec};

fn main() -> moed::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "corpus".into());
    let cfg = CorpusConfig {
        duration_s: 2.0,
        domains: vec![
            DomainSpec::known("comb", ArtifactKind::CombNotch, 0.6, 20),
            DomainSpec::known("splice", ArtifactKind::FrameDiscontinuity, 0.6, 20),
            DomainSpec::known("mirror", ArtifactKind::BandMirror, 0.6, 20),
            DomainSpec::unknown("comb-weak", ArtifactKind::CombNotch, 0.35, 10),
        ],
    };
    let manifest = generate_corpus(&cfg, &out, 42)?;
    print!("{}", manifest.summary());
    println!("known:   {:?}", manifest.known_domains());
    println!("unknown: {:?}", manifest.unknown_domains());
    println!("{} files under {out}", manifest.entries.len());
    Ok(())
}

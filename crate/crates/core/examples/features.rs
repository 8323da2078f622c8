//! Mel and linear log-power features of one real and one fake utterance.

use moed::audio::{extract, fix_length, FeatureConfig, FeatureKind};
use moed::corpus::{synth_utterance, ArtifactKind, DomainSpec};
use moed::experts::{FAKE, REAL};

fn stats(v: &[f64]) -> (f64, f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    (mean, sd, v.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

fn main() -> moed::Result<()> {
    let fc = FeatureConfig::default();
    let domain = DomainSpec::known("mirror", ArtifactKind::BandMirror, 0.6, 10);
    for (label, name) in [(REAL, "real"), (FAKE, "fake")] {
        // 3 s of audio is tiled to the fixed 4 s input.
        let w = synth_utterance(&domain, label, &format!("demo/{name}"), 3.0, 7)?;
        let w = fix_length(&w, fc.input_len)?;
        for kind in [FeatureKind::Mel, FeatureKind::Linear] {
            let map = extract(&w.samples, &fc, kind)?;
            let (mean, sd, max) = stats(&map.values());
            println!("{name} {kind:>6}: shape {:?} mean {mean:+.3} sd {sd:.3} max {max:.2}", map.shape());
        }
        // Share of log-mel energy in the top quarter of the bands.
        let mel = extract(&w.samples, &fc, FeatureKind::Mel)?;
        let t = mel.shape()[1];
        let v = mel.values();
        let top: f64 = v[v.len() * 3 / 4..].iter().sum::<f64>() / (v.len() / 4) as f64;
        println!("{name} mean standardized level of the top 16 mel bands over {t} frames: {top:+.3}");
    }
    Ok(())
}

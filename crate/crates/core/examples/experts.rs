//! The three default experts: parameter counts and one forward pass.

use moed::audio::{extract, FeatureConfig};
use moed::corpus::{synth_utterance, ArtifactKind, DomainSpec};
use moed::experts::{build_expert, ExpertConfig, FeatureBatch, FAKE};
use moed::moe::fake_scores;
use moed_tensor::nn::Module;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> moed::Result<()> {
    let fc = FeatureConfig::default();
    let domain = DomainSpec::known("comb", ArtifactKind::CombNotch, 0.6, 10);
    let w = synth_utterance(&domain, FAKE, "demo/0", 4.0, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for cfg in ExpertConfig::default_set() {
        let expert = build_expert(&cfg, &fc, &mut rng)?;
        let map = extract(&w.samples, &fc, cfg.feature)?;
        let batch = FeatureBatch::single(cfg.feature, &map)?;
        let out = moed_tensor::no_grad(|| expert.forward(&batch, false))?;
        println!(
            "{:<14} {:>7} params  input {:?}  embedding {:?}  untrained P(fake) {:.3}",
            cfg.label(),
            expert.num_parameters(),
            batch.data.shape(),
            out.embedding.shape(),
            fake_scores(&out.logits)?[0]
        );
    }
    Ok(())
}

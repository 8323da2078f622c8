//! Expert weights from both gates, and the properties the fusion keeps.

use moed::audio::{extract, FeatureConfig};
use moed::corpus::{synth_utterance, ArtifactKind, DomainSpec};
use moed::experts::{build_expert, ExpertConfig, FeatureBatch, FeatureSet, REAL};
use moed::gating::GatingConfig;
use moed::moe::{GateVariant, MoEModel};
use moed_tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> moed::Result<()> {
    let fc = FeatureConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let experts: Vec<_> = ExpertConfig::default_set()
        .iter()
        .map(|c| build_expert(c, &fc, &mut rng))
        .collect::<moed::Result<_>>()?;

    let domain = DomainSpec::known("splice", ArtifactKind::FrameDiscontinuity, 0.6, 10);
    let w = synth_utterance(&domain, REAL, "demo/1", 4.0, 1)?;
    let mut x = FeatureSet::new();
    for kind in [moed::audio::FeatureKind::Mel, moed::audio::FeatureKind::Linear] {
        x.insert(FeatureBatch::single(kind, &extract(&w.samples, &fc, kind)?)?)?;
    }

    for variant in [GateVariant::Att, GateVariant::Cat] {
        let model = MoEModel::with_new_gate(experts.clone(), variant, &GatingConfig::default(), &mut rng)?;
        let out = moed_tensor::no_grad(|| model.forward(&x, false))?;
        let alpha = out.alpha.to_vec();
        println!("{variant}: alpha {alpha:.4?} (sum {:.12})  y {:.4}", alpha.iter().sum::<f64>(), out.scores()?[0]);

        // A one-hot weight vector reproduces that expert exactly.
        let onehot = Tensor::new(&[1, 3], vec![0.0, 1.0, 0.0])?;
        let forced = moed_tensor::no_grad(|| model.forward_with_alpha(&x, false, Some(&onehot)))?;
        println!(
            "{variant}: one-hot on expert 1 -> fused {:.6?}, expert 1 logits {:.6?}",
            forced.fused_logits.to_vec(),
            out.experts[1].logits.to_vec()
        );

        if variant == GateVariant::Att {
            let moved = model.reordered(&[2, 0, 1])?;
            let out2 = moed_tensor::no_grad(|| moved.forward(&x, false))?;
            println!("att: experts reordered [2, 0, 1] -> alpha {:.4?}, y {:.4}", out2.alpha.to_vec(), out2.scores()?[0]);
        }
    }
    Ok(())
}

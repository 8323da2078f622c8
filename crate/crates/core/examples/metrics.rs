//! EER, ROC area and threshold metrics on simulated detector scores.

use moed::eval::{compute_eer, report_at_threshold, roc_auc, roc_points, ScoreSet, DEFAULT_THRESHOLD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

fn main() -> moed::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let real = Beta::new(2.0, 5.0).unwrap();
    let fake = Beta::new(5.0, 2.0).unwrap();
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for i in 0..500 {
        let label = i % 2;
        labels.push(label);
        scores.push(if label == 0 { real.sample(&mut rng) } else { fake.sample(&mut rng) });
    }
    let set = ScoreSet::unnamed(scores, labels)?;
    let (eer, at) = compute_eer(&set)?;
    println!("EER {eer:.2}% reached at threshold {at:.4}");
    println!("ROC AUC {:.4}", roc_auc(&roc_points(&set)?));
    for t in [DEFAULT_THRESHOLD, 0.5, 0.7] {
        let r = report_at_threshold(&set, t)?;
        println!("t = {t:.1}: BAC {:.2}  TPR {:.2}  TNR {:.2}", r.bac, r.tpr, r.tnr);
    }
    // Only the ranking matters to the EER.
    let squashed = ScoreSet::unnamed(set.scores.iter().map(|s| s.powi(4)).collect(), set.labels.clone())?;
    println!("EER after s -> s^4: {:.2}%", compute_eer(&squashed)?.0);
    Ok(())
}

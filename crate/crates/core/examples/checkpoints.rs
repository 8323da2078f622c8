//! Save a mixture, reload it, and see a mismatched configuration refused.

use moed::checkpoint::{load, save_moe, Detector};
use moed::config::Config;
use moed::experts::build_expert;
use moed::moe::{GateVariant, MoEModel};
use moed::training::Partitioning;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> moed::Result<()> {
    let cfg = Config::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let experts = cfg
        .experts
        .iter()
        .map(|c| build_expert(c, &cfg.features, &mut rng))
        .collect::<moed::Result<Vec<_>>>()?;
    let model = MoEModel::with_new_gate(experts, GateVariant::Att, &cfg.gate, &mut rng)?;

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("mile-att.ckpt");
    save_moe(&path, &model, Partitioning::Mile, &cfg.features, &cfg.gate)?;
    println!("wrote {} bytes", std::fs::metadata(&path)?.len());

    match load(&path, &cfg)? {
        Detector::MoE { model, partitioning } => {
            println!("reloaded {partitioning}-{} with {} experts", model.gate.variant(), model.n_experts())
        }
        Detector::Expert(_) => unreachable!("saved a mixture"),
    }

    let mut other = cfg.clone();
    other.gate.heads = 2;
    let err = load(&path, &other).unwrap_err();
    println!("with heads = 2: {err} (exit code {})", err.exit_code());
    Ok(())
}

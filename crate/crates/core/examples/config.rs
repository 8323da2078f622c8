//! Presets, dotted-key overrides and validation.

use moed::config::{Config, Preset};

fn main() -> moed::Result<()> {
    for preset in [Preset::Paper, Preset::Desk] {
        let c = Config::preset(preset);
        println!(
            "{preset}: pretrain {} epochs @ batch {} lr {:.0e}, joint {} epochs @ batch {}, gate M={} H={} D={} F={}",
            c.pretrain.max_epochs,
            c.pretrain.batch_size,
            c.pretrain.lr_max,
            c.joint.max_epochs,
            c.joint.batch_size,
            c.gate.layers,
            c.gate.heads,
            c.gate.model_dim,
            c.gate.mlp_dim
        );
    }
    let tuned = Config::desk().with_overrides(&["gate.layers=3", "experts.0.width_scale=0.5", "eval.threshold=0.5"])?;
    println!("overridden: layers {} width {} threshold {}", tuned.gate.layers, tuned.experts[0].width_scale, tuned.eval.threshold);
    let bad = Config::default().with_overrides(&["gate.heads=5"])?;
    println!("heads = 5 with D = 32: {}", bad.validate().unwrap_err());
    Ok(())
}

//! Oracles and fixtures shared by the integration tests and the acceptance
//! runner. Everything here is computed independently of the code it checks.

#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use moed::audio::{self, FeatureConfig, FeatureKind, Waveform};
use moed::config::Config;
use moed::corpus::{ArtifactKind, CorpusConfig, DomainSpec};
use moed::experts::{build_expert, Arch, ExpertConfig, FeatureBatch, FeatureSet};
use moed::gating::GatingConfig;
use moed::moe::{GateVariant, MoEModel};
use moed_tensor::{gradcheck, ops, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn toy_features() -> FeatureConfig {
    FeatureConfig {
        input_len: 1024,
        n_fft: 256,
        hop: 16,
        n_mels: 64,
        ..Default::default()
    }
}

pub fn gaussian(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Two to four narrow experts of random architecture and feature, a gate of
/// random depth and a random variant-specific width.
pub fn random_moe(rng: &mut ChaCha8Rng, variant: GateVariant) -> MoEModel {
    let fc = toy_features();
    let n = rng.random_range(2..=4);
    let experts = (0..n)
        .map(|_| {
            let arch = if rng.random_bool(0.5) { Arch::Lcnn } else { Arch::Resnet };
            let feature = if rng.random_bool(0.5) { FeatureKind::Mel } else { FeatureKind::Linear };
            let cfg = ExpertConfig {
                width_scale: 0.25,
                embed_dim: [8, 12, 16][rng.random_range(0..3)],
                ..ExpertConfig::new(arch, feature)
            };
            build_expert(&cfg, &fc, rng).unwrap()
        })
        .collect();
    let gate = GatingConfig {
        layers: rng.random_range(1..=2),
        heads: 2,
        model_dim: 8,
        mlp_dim: 16,
    };
    MoEModel::with_new_gate(experts, variant, &gate, rng).unwrap()
}

/// Standard-normal feature maps for every kind the model reads.
pub fn random_features(model: &MoEModel, batch: usize, rng: &mut impl Rng, requires_grad: bool) -> FeatureSet {
    let fc = toy_features();
    let frames = fc.frames(fc.input_len);
    let mut set = FeatureSet::new();
    for kind in model.feature_kinds() {
        let shape = [batch, 1, fc.bins(kind), frames];
        let data = gaussian(rng, shape.iter().product());
        let t = if requires_grad {
            Tensor::param(&shape, data).unwrap()
        } else {
            Tensor::new(&shape, data).unwrap()
        };
        set.insert(FeatureBatch::new(kind, t).unwrap()).unwrap();
    }
    set
}

/// Worst deviations seen over a set of random models.
#[derive(Debug, Default, Clone, Copy)]
pub struct GateStats {
    pub models: usize,
    /// max |Σα − 1| and the most negative weight, clamped at zero.
    pub simplex: f64,
    /// max |α'(perm) − perm(α)| and max |ŷ' − ŷ|.
    pub permutation: f64,
    /// max |fused − z_i| under a one-hot α = e_i.
    pub one_hot: f64,
    /// Largest excursion of a fused logit outside [min_i z_i, max_i z_i].
    pub hull: f64,
}

fn rows(t: &Tensor, width: usize) -> Vec<Vec<f64>> {
    t.to_vec().chunks(width).map(<[f64]>::to_vec).collect()
}

/// Checks one model on one random batch and folds the deviations into `s`.
pub fn check_gate(model: &MoEModel, rng: &mut ChaCha8Rng, s: &mut GateStats) {
    let n = model.n_experts();
    let b = 3;
    let x = random_features(model, b, rng, false);
    let out = moed_tensor::no_grad(|| model.forward(&x, false)).unwrap();
    let alpha = rows(&out.alpha, n);
    let fused = rows(&out.fused_logits, 2);
    let logits: Vec<Vec<Vec<f64>>> = out.experts.iter().map(|e| rows(&e.logits, 2)).collect();

    for (r, a) in alpha.iter().enumerate() {
        s.simplex = s.simplex.max((a.iter().sum::<f64>() - 1.0).abs());
        s.simplex = s.simplex.max(-a.iter().copied().fold(0.0, f64::min));
        for c in 0..2 {
            let zs = logits.iter().map(|z| z[r][c]);
            let lo = zs.clone().fold(f64::INFINITY, f64::min);
            let hi = zs.fold(f64::NEG_INFINITY, f64::max);
            let v = fused[r][c];
            s.hull = s.hull.max(lo - v).max(v - hi);
        }
    }

    for i in 0..n {
        let mut e = vec![0.0; b * n];
        for r in 0..b {
            e[r * n + i] = 1.0;
        }
        let onehot = Tensor::new(&[b, n], e).unwrap();
        let forced = moed_tensor::no_grad(|| model.forward_with_alpha(&x, false, Some(&onehot))).unwrap();
        for (got, want) in forced.fused_logits.to_vec().iter().zip(out.experts[i].logits.to_vec()) {
            s.one_hot = s.one_hot.max((got - want).abs());
        }
    }

    if model.gate.variant() == GateVariant::Att {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.rotate_left(1);
        if n > 2 {
            perm.swap(0, 1);
        }
        let moved = model.reordered(&perm).unwrap();
        let out2 = moed_tensor::no_grad(|| moved.forward(&x, false)).unwrap();
        let alpha2 = rows(&out2.alpha, n);
        for r in 0..b {
            for (slot, &src) in perm.iter().enumerate() {
                s.permutation = s.permutation.max((alpha2[r][slot] - alpha[r][src]).abs());
            }
        }
        for (p, q) in out.scores().unwrap().iter().zip(out2.scores().unwrap()) {
            s.permutation = s.permutation.max((p - q).abs());
        }
    }
    s.models += 1;
}

/// The four gate invariants over `count` random models, half of each variant.
pub fn gate_invariants(count: usize, seed: u64) -> GateStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = GateStats::default();
    for k in 0..count {
        let variant = if k % 2 == 0 { GateVariant::Att } else { GateVariant::Cat };
        let model = random_moe(&mut rng, variant);
        check_gate(&model, &mut rng, &mut s);
    }
    s
}

/// Equal error rate (percent) from a dense grid of thresholds over [0, 1],
/// counting scores at or above each threshold as fake and interpolating
/// between the two grid points that bracket FNR = FPR.
pub fn dense_eer(scores: &[f64], labels: &[usize], grid: usize) -> f64 {
    let mut real_at = vec![0usize; grid + 1];
    let mut fake_at = vec![0usize; grid + 1];
    for (&s, &y) in scores.iter().zip(labels) {
        assert!((0.0..=1.0).contains(&s), "score {s} outside [0, 1]");
        // Smallest k with s >= 1 - k/grid.
        let k = (((1.0 - s) * grid as f64).ceil() as usize).min(grid);
        if y == 0 {
            real_at[k] += 1;
        } else {
            fake_at[k] += 1;
        }
    }
    let reals = labels.iter().filter(|&&y| y == 0).count() as f64;
    let fakes = labels.len() as f64 - reals;
    let (mut fp, mut tp) = (0usize, 0usize);
    let (mut prev_fpr, mut prev_gap) = (0.0, 1.0);
    for k in 0..=grid {
        fp += real_at[k];
        tp += fake_at[k];
        let fpr = fp as f64 / reals;
        let gap = (1.0 - tp as f64 / fakes) - fpr;
        if gap <= 0.0 {
            let lambda = prev_gap / (prev_gap - gap);
            return 100.0 * (prev_fpr + lambda * (fpr - prev_fpr));
        }
        (prev_fpr, prev_gap) = (fpr, gap);
    }
    unreachable!("every score is counted by the last threshold")
}

/// Random scores in [0, 1] with both classes present. Some sets are
/// quantized to force ties; fakes are shifted up by a random margin.
pub fn random_score_set(rng: &mut impl Rng, len: usize) -> (Vec<f64>, Vec<usize>) {
    let mut labels: Vec<usize> = (0..len).map(|_| rng.random_range(0..2)).collect();
    labels[0] = 0;
    labels[1] = 1;
    let shift = rng.random_range(0.0..0.4);
    let quantum = [0.0, 0.01, 0.05][rng.random_range(0..3)];
    let scores = labels
        .iter()
        .map(|&y| {
            let s: f64 = (rng.random_range(0.0..1.0) + shift * y as f64).min(1.0);
            if quantum > 0.0 {
                (s / quantum).round() * quantum
            } else {
                s
            }
        })
        .collect();
    (scores, labels)
}

/// Two strictly increasing maps applied to scores.
pub fn monotone_transforms() -> Vec<(&'static str, fn(f64) -> f64)> {
    vec![
        ("cubic", |s| 0.5 * s * s * s + 0.25 * s + 0.1),
        ("exp", |s| (3.0 * s).exp() - 7.0),
    ]
}

/// End-to-end finite-difference check of the smoothed cross-entropy of a
/// small mixture in training mode, over random coordinates of every
/// parameter and the input maps. Returns the relative error.
///
/// The network is piecewise smooth with ReLU and max-pool switch points
/// that can sit within 1e-7 of the evaluation point, so the step is 1e-8.
pub fn moe_end_to_end_gradcheck(seed: u64, per_tensor: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = random_moe(&mut rng, if seed % 2 == 0 { GateVariant::Att } else { GateVariant::Cat });
    let b = 4;
    let x = random_features(&model, b, &mut rng, true);
    let labels: Vec<usize> = (0..b).map(|i| i % 2).collect();
    let mut inputs: Vec<Tensor> = model.feature_kinds().iter().map(|&k| x.get(k).unwrap().data.clone()).collect();
    inputs.extend(moed_tensor::nn::Module::parameters(&model));
    let mut coords = Vec::new();
    for (i, t) in inputs.iter().enumerate() {
        for _ in 0..per_tensor.min(t.numel()) {
            coords.push((i, rng.random_range(0..t.numel())));
        }
    }
    let report = gradcheck::check_coords(
        || -> moed::Result<Tensor> {
            let out = model.forward(&x, true)?;
            Ok(ops::cross_entropy_smoothed(&out.fused_logits, &labels, 0.2)?)
        },
        &inputs,
        &coords,
        1e-8,
    )
    .unwrap();
    report.rel_error()
}

/// Frontend measurements on the default feature geometry.
#[derive(Debug, Clone, Copy)]
pub struct FrontendStats {
    /// Every fix_length output had exactly the target length and matched
    /// the repeat-pad / truncate rule sample for sample.
    pub fix_length_ok: bool,
    /// max relative deviation of mel(aX + bY) from a·mel(X) + b·mel(Y).
    pub mel_linearity: f64,
    /// Smallest share of frame energy within one bin of a bin-centred sine.
    pub sine_concentration: f64,
    /// max relative Parseval mismatch over all frames.
    pub parseval: f64,
}

fn reflect(x: &[f64], i: isize) -> f64 {
    let n = x.len() as isize;
    let j = if i < 0 { -i } else if i >= n { 2 * (n - 1) - i } else { i };
    x[j as usize]
}

pub fn frontend_checks(seed: u64) -> FrontendStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fc = FeatureConfig::default();
    let target = audio::INPUT_LEN;

    let mut fix_length_ok = true;
    for len in [1, 999, 16_000, 31_999, 63_999, 64_000, 64_001, 100_000] {
        let x = gaussian(&mut rng, len);
        let out = audio::fix_length(&Waveform::new(x.clone()), target).unwrap();
        fix_length_ok &= out.len() == target;
        fix_length_ok &= out.samples.iter().enumerate().all(|(i, &v)| v == x[i % len]);
    }

    let bins = fc.linear_bins();
    let frames = 7;
    let mut mel_linearity: f64 = 0.0;
    for _ in 0..10 {
        let xs: Vec<f64> = (0..bins * frames).map(|_| rng.random_range(0.0..10.0)).collect();
        let ys: Vec<f64> = (0..bins * frames).map(|_| rng.random_range(0.0..10.0)).collect();
        let (a, b) = (rng.random_range(0.0..5.0), rng.random_range(0.0..5.0));
        let mix: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| a * x + b * y).collect();
        let mel = |v: Vec<f64>| audio::mel_project(&Tensor::new(&[bins, frames], v).unwrap(), fc.n_mels).unwrap().to_vec();
        let (mx, my, mm) = (mel(xs), mel(ys), mel(mix));
        for i in 0..mm.len() {
            let want = a * mx[i] + b * my[i];
            mel_linearity = mel_linearity.max((mm[i] - want).abs() / want.abs().max(1e-12));
        }
    }

    let mut sine_concentration: f64 = 1.0;
    let sr = f64::from(audio::SAMPLE_RATE);
    for k0 in [5usize, 40, 128, 250] {
        let f = k0 as f64 * sr / fc.n_fft as f64;
        let x: Vec<f64> = (0..8000).map(|n| (2.0 * std::f64::consts::PI * f * n as f64 / sr).sin()).collect();
        let p = audio::stft_power(&x, &fc).unwrap();
        let t_total = p.shape()[1];
        let v = p.to_vec();
        // Interior frames only: edge frames see the reflected signal.
        for t in 4..t_total - 4 {
            let col: Vec<f64> = (0..bins).map(|k| v[k * t_total + t]).collect();
            let total: f64 = col.iter().sum();
            let near: f64 = col[k0 - 1..=k0 + 1].iter().sum();
            sine_concentration = sine_concentration.min(near / total);
        }
    }

    let x = gaussian(&mut rng, 4000);
    let p = audio::stft_power(&x, &fc).unwrap();
    let t_total = p.shape()[1];
    let v = p.to_vec();
    let window = audio::hann(fc.n_fft);
    let half = (fc.n_fft / 2) as isize;
    let mut parseval: f64 = 0.0;
    for t in 0..t_total {
        let time: f64 = (0..fc.n_fft)
            .map(|n| {
                let s = reflect(&x, (t * fc.hop) as isize + n as isize - half) * window[n];
                s * s
            })
            .sum::<f64>()
            * fc.n_fft as f64;
        let freq: f64 = (0..bins)
            .map(|k| {
                let weight = if k == 0 || k == bins - 1 { 1.0 } else { 2.0 };
                weight * v[k * t_total + t]
            })
            .sum();
        parseval = parseval.max((freq - time).abs() / time);
    }

    FrontendStats {
        fix_length_ok,
        mel_linearity,
        sine_concentration,
        parseval,
    }
}

/// A configuration small enough for a full pipeline in seconds: three
/// known domains with 10 utterances per class, one held-out domain, 1 s
/// clips and narrow experts.
pub fn tiny_config() -> Config {
    let mut cfg = Config::desk();
    cfg.features.input_len = 16_000;
    cfg.corpus = CorpusConfig {
        duration_s: 1.0,
        domains: vec![
            DomainSpec::known("comb", ArtifactKind::CombNotch, 0.6, 10),
            DomainSpec::known("splice", ArtifactKind::FrameDiscontinuity, 0.6, 10),
            DomainSpec::known("mirror", ArtifactKind::BandMirror, 0.6, 10),
            DomainSpec::unknown("comb-weak", ArtifactKind::CombNotch, 0.35, 4),
        ],
    };
    for e in cfg.experts.iter_mut().chain(cfg.mele_experts.iter_mut()) {
        e.width_scale = 0.25;
        e.embed_dim = 16;
    }
    cfg.pretrain.max_epochs = 2;
    cfg.pretrain.batch_size = 8;
    cfg.joint.max_epochs = 1;
    cfg.joint.batch_size = 8;
    cfg
}

/// Runs the command-line binary and returns its output.
pub fn moed(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_moed"))
        .current_dir(dir)
        .args(args)
        .arg("--quiet")
        .output()
        .expect("binary runs")
}

/// Like [`moed`], failing the caller with stderr on a non-zero exit.
pub fn moed_ok(dir: &Path, args: &[&str]) -> String {
    let out = moed(dir, args);
    assert!(
        out.status.success(),
        "moed {args:?} exited {:?}:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// gen-data, three pre-trained experts, the attention mixture and its
/// evaluation, all under `dir` with the configuration at `dir/config.json`.
pub fn end_to_end(dir: &Path, cfg: &Config) {
    cfg.save(dir.join("config.json")).unwrap();
    let c = ["--config", "config.json"];
    moed_ok(dir, &[&["gen-data", "--out", "data"][..], &c].concat());
    for i in ["0", "1", "2"] {
        moed_ok(dir, &[&["train", "--stage", "pretrain", "--expert", i][..], &c].concat());
    }
    moed_ok(dir, &[&["train", "--stage", "joint", "--gate", "att"][..], &c].concat());
    moed_ok(dir, &[&["eval", "--checkpoint", "out/mile-att.ckpt"][..], &c].concat());
}

use moed_tensor::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecAugmentConfig {
    pub max_time_masks: usize,
    pub max_freq_masks: usize,
    pub max_time_width: usize,
    pub max_freq_width: usize,
}

impl Default for SpecAugmentConfig {
    fn default() -> Self {
        SpecAugmentConfig {
            max_time_masks: 2,
            max_freq_masks: 2,
            max_time_width: 40,
            max_freq_width: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskAxis {
    Time,
    Freq,
}

/// A stripe `start..start + width` along one axis of a `[F, T]` map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mask {
    pub axis: MaskAxis,
    pub start: usize,
    pub width: usize,
}

/// Replaces every masked stripe by the mean of the unmasked input map.
pub fn apply_masks(feat: &Tensor, masks: &[Mask]) -> Result<Tensor> {
    let &[f, t] = feat.shape() else {
        return Err(Error::data(format!("expected a [bins, frames] map, got {:?}", feat.shape())));
    };
    let mut data = feat.to_vec();
    let mean = data.iter().sum::<f64>() / data.len() as f64;
    for m in masks {
        let extent = match m.axis {
            MaskAxis::Time => t,
            MaskAxis::Freq => f,
        };
        if m.start + m.width > extent {
            return Err(Error::data(format!("mask {m:?} exceeds extent {extent}")));
        }
        for s in m.start..m.start + m.width {
            match m.axis {
                MaskAxis::Time => (0..f).for_each(|r| data[r * t + s] = mean),
                MaskAxis::Freq => data[s * t..(s + 1) * t].fill(mean),
            }
        }
    }
    Ok(Tensor::new(&[f, t], data)?)
}

/// Draws up to the configured number of time and frequency stripes and
/// applies them. Returns the masked map and the stripes used.
pub fn spec_augment(feat: &Tensor, cfg: &SpecAugmentConfig, rng: &mut impl Rng) -> Result<(Tensor, Vec<Mask>)> {
    let &[f, t] = feat.shape() else {
        return Err(Error::data(format!("expected a [bins, frames] map, got {:?}", feat.shape())));
    };
    if cfg.max_time_width >= t || cfg.max_freq_width >= f {
        return Err(Error::config(format!(
            "mask widths ({}, {}) must be below the feature extents ({t}, {f})",
            cfg.max_time_width, cfg.max_freq_width
        )));
    }
    let mut masks = Vec::new();
    let mut draw = |axis, count: usize, max_width: usize, extent: usize, rng: &mut dyn rand::RngCore| {
        for _ in 0..rng.random_range(0..=count) {
            let width = rng.random_range(0..=max_width);
            let start = rng.random_range(0..=extent - width);
            masks.push(Mask { axis, start, width });
        }
    };
    draw(MaskAxis::Time, cfg.max_time_masks, cfg.max_time_width, t, rng);
    draw(MaskAxis::Freq, cfg.max_freq_masks, cfg.max_freq_width, f, rng);
    Ok((apply_masks(feat, &masks)?, masks))
}

/// Adds white Gaussian noise scaled to hit `snr_db` exactly on this draw.
/// `f64::INFINITY` returns the input untouched.
pub fn add_noise(w: &Waveform, snr_db: f64, rng: &mut impl Rng) -> Result<Waveform> {
    if snr_db == f64::INFINITY {
        return Ok(w.clone());
    }
    if !snr_db.is_finite() {
        return Err(Error::config(format!("invalid SNR {snr_db} dB")));
    }
    let signal = w.energy();
    if signal == 0.0 {
        return Err(Error::data("cannot set an SNR on a silent waveform"));
    }
    let noise: Vec<f64> = (0..w.len()).map(|_| rng.sample(StandardNormal)).collect();
    let raw: f64 = noise.iter().map(|n| n * n).sum();
    let gain = (signal / (raw * 10f64.powf(snr_db / 10.0))).sqrt();
    let samples = w.samples.iter().zip(&noise).map(|(s, n)| s + gain * n).collect();
    Ok(Waveform {
        samples,
        sample_rate: w.sample_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn map(f: usize, t: usize) -> Tensor {
        Tensor::new(&[f, t], (0..f * t).map(|i| (i as f64).sin() + 2.0).collect()).unwrap()
    }

    #[test]
    fn zero_masks_is_identity() {
        let x = map(8, 20);
        let cfg = SpecAugmentConfig {
            max_time_masks: 0,
            max_freq_masks: 0,
            max_time_width: 5,
            max_freq_width: 2,
        };
        let (y, masks) = spec_augment(&x, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(masks.is_empty());
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn full_height_time_mask_sets_exactly_w_columns() {
        let (f, t, w) = (6, 30, 7);
        let x = map(f, t);
        let mean = x.values().iter().sum::<f64>() / (f * t) as f64;
        let y = apply_masks(&x, &[Mask { axis: MaskAxis::Time, start: 11, width: w }]).unwrap();
        let y = y.values();
        let masked = (0..t).filter(|&c| (0..f).all(|r| y[r * t + c] == mean)).count();
        assert_eq!(masked, w);
    }

    #[test]
    fn augment_is_seed_deterministic() {
        let x = map(16, 50);
        let cfg = SpecAugmentConfig {
            max_time_masks: 3,
            max_freq_masks: 3,
            max_time_width: 10,
            max_freq_width: 4,
        };
        let a = spec_augment(&x, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = spec_augment(&x, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.0.to_vec(), b.0.to_vec());
    }

    #[test]
    fn widths_must_fit() {
        let cfg = SpecAugmentConfig {
            max_time_width: 50,
            ..Default::default()
        };
        assert!(matches!(
            spec_augment(&map(16, 50), &cfg, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::Config(_))
        ));
    }

    fn tone() -> Waveform {
        Waveform::new((0..16_000).map(|i| 0.5 * (i as f64 * 0.07).sin()).collect())
    }

    #[test]
    fn noise_hits_requested_snr() {
        let w = tone();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for snr in [0.0, 10.0, 25.0] {
            let y = add_noise(&w, snr, &mut rng).unwrap();
            let noise: f64 = y.samples.iter().zip(&w.samples).map(|(a, b)| (a - b).powi(2)).sum();
            let measured = 10.0 * (w.energy() / noise).log10();
            assert!((measured - snr).abs() < 0.5, "{measured} vs {snr}");
        }
        let y = add_noise(&w, 0.0, &mut rng).unwrap();
        let noise: f64 = y.samples.iter().zip(&w.samples).map(|(a, b)| (a - b).powi(2)).sum();
        assert!((noise / w.energy() - 1.0).abs() < 0.12);
    }

    #[test]
    fn noise_identity_silence_and_determinism() {
        let w = tone();
        assert_eq!(add_noise(&w, f64::INFINITY, &mut ChaCha8Rng::seed_from_u64(0)).unwrap(), w);
        let silent = Waveform::new(vec![0.0; 100]);
        assert!(matches!(
            add_noise(&silent, 10.0, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::Data(_))
        ));
        let a = add_noise(&w, 5.0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = add_noise(&w, 5.0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }
}

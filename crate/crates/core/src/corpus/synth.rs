//! Procedural speech-like carriers and the spoofing artifacts applied to them.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;

use super::ArtifactKind;
use crate::audio::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

const SR: f64 = SAMPLE_RATE as f64;
const PEAK: f64 = 0.9;
/// Samples per control block; pitch and formants are held within a block.
const BLOCK: usize = 80;
const F0_RANGE: (f64, f64) = (90.0, 250.0);
const TOP_HARMONIC_HZ: f64 = 7_800.0;
/// Comb delay in samples: notches every 400 Hz.
pub const COMB_DELAY: usize = 40;
/// Splice period of the frame-discontinuity artifact (20 ms).
pub const SPLICE_PERIOD: usize = 320;
const SPLICE_JITTER: i64 = 64;
const MIRROR_GAIN: f64 = 0.3;
const MIRROR_CUTOFF_HZ: f64 = 3_800.0;

fn peak_normalize(x: &mut [f64]) {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let g = PEAK / peak;
        x.iter_mut().for_each(|v| *v *= g);
    }
}

struct Formant {
    center: f64,
    bandwidth: f64,
    rate: f64,
    phase: f64,
}

/// Harmonic complex with a drifting, vibrato-modulated f0 in 90–250 Hz,
/// moving formant resonances, a syllabic amplitude envelope and low-level
/// pink noise, peak-normalized to 0.9.
pub fn synth_real(duration_s: f64, rng: &mut impl Rng) -> Result<Waveform> {
    if !(1.0..=10.0).contains(&duration_s) {
        return Err(Error::config(format!("duration {duration_s} s outside [1, 10]")));
    }
    let n = (duration_s * SR).round() as usize;
    let base_f0 = rng.random_range(110.0..200.0);
    let drift: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.05..0.12),
                rng.random_range(0.1..0.8),
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let vib_depth = rng.random_range(0.005..0.02);
    let vib_rate = rng.random_range(4.5..6.5);
    let vib_phase = rng.random_range(0.0..2.0 * PI);
    let formants = [(300.0, 900.0, 60.0, 120.0), (900.0, 2500.0, 80.0, 160.0), (2300.0, 3300.0, 100.0, 200.0), (3500.0, 4500.0, 200.0, 300.0)]
        .map(|(lo, hi, bw_lo, bw_hi)| Formant {
            center: rng.random_range(lo..hi),
            bandwidth: rng.random_range(bw_lo..bw_hi),
            rate: rng.random_range(0.5..3.0),
            phase: rng.random_range(0.0..2.0 * PI),
        });
    let syllable_rate = rng.random_range(2.5..5.0);
    let syllable_phase = rng.random_range(0.0..2.0 * PI);
    let max_harmonics = (TOP_HARMONIC_HZ / F0_RANGE.0) as usize;
    let harmonic_phase: Vec<f64> = (0..max_harmonics).map(|_| rng.random_range(0.0..2.0 * PI)).collect();

    let mut voiced = vec![0.0; n];
    let mut theta = 0.0;
    let mut rot = vec![Complex::new(0.0, 0.0); max_harmonics];
    let mut step = vec![Complex::new(0.0, 0.0); max_harmonics];
    let mut gain = vec![0.0; max_harmonics];
    for start in (0..n).step_by(BLOCK) {
        let t = start as f64 / SR;
        let d: f64 = drift.iter().map(|(a, r, p)| a * (2.0 * PI * r * t + p).sin()).sum();
        let vib = 1.0 + vib_depth * (2.0 * PI * vib_rate * t + vib_phase).sin();
        let f0 = (base_f0 * d.exp() * vib).clamp(F0_RANGE.0, F0_RANGE.1);
        let dtheta = 2.0 * PI * f0 / SR;
        for k in 0..max_harmonics {
            let h = (k + 1) as f64;
            let f = h * f0;
            let resonance: f64 = formants
                .iter()
                .map(|fm| {
                    let c = fm.center * (1.0 + 0.08 * (2.0 * PI * fm.rate * t + fm.phase).sin());
                    1.0 / (1.0 + ((f - c) / (fm.bandwidth / 2.0)).powi(2))
                })
                .sum();
            let taper = ((TOP_HARMONIC_HZ - f) / 800.0).clamp(0.0, 1.0);
            gain[k] = (resonance + 0.02) * taper / h.sqrt();
            rot[k] = Complex::from_polar(1.0, h * theta + harmonic_phase[k]);
            step[k] = Complex::from_polar(1.0, h * dtheta);
        }
        let end = (start + BLOCK).min(n);
        for v in &mut voiced[start..end] {
            let mut acc = 0.0;
            for k in 0..max_harmonics {
                acc += gain[k] * rot[k].im;
                rot[k] *= step[k];
            }
            *v = acc;
        }
        theta = (theta + dtheta * (end - start) as f64) % (2.0 * PI);
    }

    let fade = (0.05 * SR) as usize;
    for (i, v) in voiced.iter_mut().enumerate() {
        let t = i as f64 / SR;
        let syllable = 0.5 + 0.5 * (2.0 * PI * syllable_rate * t + syllable_phase).sin();
        let edge = (i.min(n - 1 - i) as f64 / fade as f64).min(1.0);
        *v *= (0.2 + 0.8 * syllable.powf(1.5)) * edge;
    }

    let rms = (voiced.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let noise_rms = rms * rng.random_range(0.01..0.03);
    let pink = pink_noise(n, rng);
    let pink_rms = (pink.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let mut out: Vec<f64> = voiced.iter().zip(&pink).map(|(v, p)| v + p * noise_rms / pink_rms).collect();
    peak_normalize(&mut out);
    Ok(Waveform::new(out))
}

/// Paul Kellet's economy pink filter over Gaussian white noise.
fn pink_noise(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
    (0..n)
        .map(|_| {
            let w: f64 = rng.sample(StandardNormal);
            b0 = 0.99765 * b0 + w * 0.0990460;
            b1 = 0.96300 * b1 + w * 0.2965164;
            b2 = 0.57000 * b2 + w * 1.0526913;
            b0 + b1 + b2 + w * 0.1848
        })
        .collect()
}

/// Hann-windowed sinc low-pass, odd length, unit DC gain.
fn lowpass_taps(cutoff_hz: f64, len: usize) -> Vec<f64> {
    let fc = cutoff_hz / SR;
    let mid = (len / 2) as f64;
    let mut taps: Vec<f64> = (0..len)
        .map(|i| {
            let x = i as f64 - mid;
            let sinc = if x == 0.0 { 2.0 * fc } else { (2.0 * PI * fc * x).sin() / (PI * x) };
            sinc * (0.5 - 0.5 * (2.0 * PI * i as f64 / (len - 1) as f64).cos())
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Zero-phase (centered) FIR filtering with zero extension.
fn filter_centered(x: &[f64], taps: &[f64]) -> Vec<f64> {
    let half = taps.len() / 2;
    (0..x.len())
        .map(|n| {
            taps.iter()
                .enumerate()
                .filter_map(|(j, &t)| (n + half).checked_sub(j).and_then(|i| x.get(i)).map(|v| t * v))
                .sum()
        })
        .collect()
}

/// `y[n] = x[n] − s·x[n − D]`: notches at multiples of `SR / D`.
pub fn comb_notch(x: &[f64], strength: f64) -> Vec<f64> {
    (0..x.len())
        .map(|n| x[n] - n.checked_sub(COMB_DELAY).map_or(0.0, |m| strength * x[m]))
        .collect()
}

/// Every 20 ms the signal resumes from a jittered read position, leaving
/// waveform discontinuities at segment boundaries; blended by strength.
pub fn frame_discontinuity(x: &[f64], strength: f64, rng: &mut impl Rng) -> Vec<f64> {
    let n = x.len() as i64;
    let mut out = Vec::with_capacity(x.len());
    for (seg, chunk) in x.chunks(SPLICE_PERIOD).enumerate() {
        let offset = rng.random_range(-SPLICE_JITTER..=SPLICE_JITTER);
        for (i, &v) in chunk.iter().enumerate() {
            let src = ((seg * SPLICE_PERIOD + i) as i64 + offset).clamp(0, n - 1) as usize;
            out.push((1.0 - strength) * v + strength * x[src]);
        }
    }
    out
}

/// Low-pass at ~4 kHz plus a spectrally mirrored copy of the low band
/// folded into the emptied upper band; blended by strength.
pub fn band_mirror(x: &[f64], strength: f64) -> Vec<f64> {
    let low = filter_centered(x, &lowpass_taps(MIRROR_CUTOFF_HZ, 63));
    x.iter()
        .zip(&low)
        .enumerate()
        .map(|(n, (&v, &l))| {
            let mirrored = if n % 2 == 0 { l } else { -l };
            (1.0 - strength) * v + strength * (l + MIRROR_GAIN * mirrored)
        })
        .collect()
}

/// Applies the artifact to a real-like carrier and peak-normalizes.
pub fn synth_fake(carrier: &Waveform, kind: ArtifactKind, strength: f64, rng: &mut impl Rng) -> Result<Waveform> {
    if !(strength > 0.0 && strength <= 1.0) {
        return Err(Error::config(format!("artifact strength {strength} outside (0, 1]")));
    }
    let x = &carrier.samples;
    let mut y = match kind {
        ArtifactKind::CombNotch => comb_notch(x, strength),
        ArtifactKind::FrameDiscontinuity => frame_discontinuity(x, strength, rng),
        ArtifactKind::BandMirror => band_mirror(x, strength),
    };
    peak_normalize(&mut y);
    Ok(Waveform::new(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rustfft::FftPlanner;

    fn power_spectrum(x: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
        buf[..x.len() / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
    }

    #[test]
    fn real_length_peak_and_diversity() {
        let a = synth_real(2.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = synth_real(2.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a.len(), 32_000);
        let peak = a.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 0.9).abs() < 1e-9);
        let dot: f64 = a.samples.iter().zip(&b.samples).map(|(x, y)| x * y).sum();
        let corr = dot / (a.energy() * b.energy()).sqrt();
        assert!(corr.abs() < 0.9, "{corr}");
        assert!(synth_real(0.5, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn real_energy_sits_in_the_speech_band() {
        let w = synth_real(4.0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let p = power_spectrum(&w.samples);
        let hz = |k: usize| k as f64 * SR / w.len() as f64;
        let total: f64 = p.iter().sum();
        let band: f64 = p.iter().enumerate().filter(|(k, _)| (80.0..5000.0).contains(&hz(*k))).map(|(_, v)| v).sum();
        assert!(band / total > 0.95, "{}", band / total);
    }

    #[test]
    fn weak_artifacts_are_nearly_transparent() {
        let carrier = synth_real(2.0, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let before = power_spectrum(&carrier.samples);
        for kind in [ArtifactKind::CombNotch, ArtifactKind::FrameDiscontinuity, ArtifactKind::BandMirror] {
            let y = synth_fake(&carrier, kind, 1e-6, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            let after = power_spectrum(&y.samples);
            // Compare band energies in 250 Hz bands carrying real content.
            let per_band = 250 * carrier.len() / SAMPLE_RATE as usize;
            for (a, b) in before.chunks(per_band).zip(after.chunks(per_band)) {
                let (ea, eb): (f64, f64) = (a.iter().sum(), b.iter().sum());
                if ea > 1e-6 * before.iter().sum::<f64>() {
                    assert!((10.0 * (eb / ea).log10()).abs() < 1.0, "{kind:?}");
                }
            }
        }
    }

    #[test]
    fn full_comb_notches_are_deep() {
        let carrier = synth_real(4.0, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let y = comb_notch(&carrier.samples, 1.0);
        let (px, py) = (power_spectrum(&carrier.samples), power_spectrum(&y));
        let per_hz = carrier.len() as f64 / SR;
        for notch in (1..10).map(|m| m as f64 * SR / COMB_DELAY as f64) {
            let k = (notch * per_hz).round() as usize;
            let window = |p: &[f64]| p[k - 2..=k + 2].iter().sum::<f64>();
            let depth = 10.0 * (window(&px) / window(&py)).log10();
            assert!(depth >= 6.0, "notch at {notch} Hz only {depth} dB deep");
        }
    }

    #[test]
    fn mirror_fills_the_band_above_5k() {
        let carrier = synth_real(2.0, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let y = synth_fake(&carrier, ArtifactKind::BandMirror, 1.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let share = |x: &[f64]| {
            let p = power_spectrum(x);
            let upper = p.len() * 5 / 8;
            p[upper..].iter().sum::<f64>() / p.iter().sum::<f64>()
        };
        assert!(share(&y.samples) > 3.0 * share(&carrier.samples));
    }

    #[test]
    fn fakes_are_seed_deterministic() {
        let carrier = synth_real(1.0, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let a = synth_fake(&carrier, ArtifactKind::FrameDiscontinuity, 0.7, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = synth_fake(&carrier, ArtifactKind::FrameDiscontinuity, 0.7, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert!(synth_fake(&carrier, ArtifactKind::CombNotch, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn lowpass_has_unit_dc_gain_and_cuts_nyquist() {
        let taps = lowpass_taps(MIRROR_CUTOFF_HZ, 63);
        assert!((taps.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let nyquist: f64 = taps.iter().enumerate().map(|(i, t)| if i % 2 == 0 { *t } else { -t }).sum();
        assert!(nyquist.abs() < 1e-3);
    }
}

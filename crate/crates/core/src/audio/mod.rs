//! Waveform handling and the spectrogram front end shared by all experts.

mod augment;
pub mod wav;

use std::cell::RefCell;
use std::fmt;
use std::sync::Arc;

use moed_tensor::{ops, Tensor};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use augment::{add_noise, apply_masks, spec_augment, Mask, MaskAxis, SpecAugmentConfig};

pub const SAMPLE_RATE: u32 = 16_000;
/// Four seconds at 16 kHz.
pub const INPUT_LEN: usize = 64_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>) -> Self {
        Waveform {
            samples,
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Mel,
    Linear,
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureKind::Mel => "mel",
            FeatureKind::Linear => "linear",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    pub input_len: usize,
    pub n_fft: usize,
    pub hop: usize,
    /// Band count for mel features; linear features ignore it.
    pub n_mels: usize,
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            input_len: INPUT_LEN,
            n_fft: 512,
            hop: 160,
            n_mels: 64,
            log_floor: 1e-10,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_len < self.n_fft {
            return Err(Error::config("input_len shorter than one STFT frame"));
        }
        if self.n_fft < 4 || self.n_fft % 2 != 0 {
            return Err(Error::config(format!("n_fft must be even and ≥ 4, got {}", self.n_fft)));
        }
        if self.hop == 0 || self.hop > self.n_fft {
            return Err(Error::config(format!("hop must be in 1..={}, got {}", self.n_fft, self.hop)));
        }
        if self.n_mels < 2 || self.n_mels >= self.linear_bins() {
            return Err(Error::config(format!(
                "n_mels must be in 2..{}, got {}",
                self.linear_bins(),
                self.n_mels
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::config("log_floor must be positive"));
        }
        Ok(())
    }

    pub fn linear_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Frequency extent of a feature map of the given kind.
    pub fn bins(&self, kind: FeatureKind) -> usize {
        match kind {
            FeatureKind::Mel => self.n_mels,
            FeatureKind::Linear => self.linear_bins(),
        }
    }

    /// Frame count for a signal of `len` samples (centered frames).
    pub fn frames(&self, len: usize) -> usize {
        1 + len / self.hop
    }
}

/// Tiles short inputs end to end and keeps the head of long ones.
pub fn fix_length(w: &Waveform, target_len: usize) -> Result<Waveform> {
    if w.is_empty() {
        return Err(Error::data("cannot fix the length of an empty waveform"));
    }
    let samples = w.samples.iter().copied().cycle().take(target_len).collect();
    Ok(Waveform {
        samples,
        sample_rate: w.sample_rate,
    })
}

pub fn hann(n: usize) -> Vec<f64> {
    // Periodic window: sums to a constant under 50% and 25% hops.
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn fft_plan(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n))
}

/// Reflect padding by `pad` on both sides, edge sample not repeated.
fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|i| x[i]));
    out.extend_from_slice(x);
    out.extend((1..=pad).map(|i| x[n - 1 - i]));
    out
}

/// One-sided power spectrogram `|X|²` of centered Hann frames, shape
/// `[n_fft/2 + 1, frames]`.
pub fn stft_power(samples: &[f64], cfg: &FeatureConfig) -> Result<Tensor> {
    let n_fft = cfg.n_fft;
    if samples.len() < n_fft {
        return Err(Error::data(format!(
            "signal of {} samples is shorter than one {n_fft}-sample frame",
            samples.len()
        )));
    }
    let padded = reflect_pad(samples, n_fft / 2);
    let window = hann(n_fft);
    let bins = cfg.linear_bins();
    let frames = cfg.frames(samples.len());
    let fft = fft_plan(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut out = vec![0.0; bins * frames];
    for t in 0..frames {
        let frame = &padded[t * cfg.hop..t * cfg.hop + n_fft];
        for ((b, &x), &w) in buf.iter_mut().zip(frame).zip(&window) {
            *b = Complex::new(x * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (k, c) in buf[..bins].iter().enumerate() {
            out[k * frames + t] = c.norm_sqr();
        }
    }
    Ok(Tensor::new(&[bins, frames], out)?)
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK-scale filterbank, `[n_mels, n_fft/2 + 1]` row-major.
/// Band edges are equally spaced in mel between 0 Hz and Nyquist.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32) -> Result<Vec<f64>> {
    let bins = n_fft / 2 + 1;
    if n_mels < 2 || n_mels >= bins {
        return Err(Error::config(format!("n_mels must be in 2..{bins}, got {n_mels}")));
    }
    let nyquist = f64::from(sample_rate) / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|j| mel_to_hz(top * j as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = f64::from(sample_rate) / n_fft as f64;
    let mut fb = vec![0.0; n_mels * bins];
    for m in 0..n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = k as f64 * bin_hz;
            let w = ((f - lo) / (mid - lo)).min((hi - f) / (hi - mid));
            fb[m * bins + k] = w.max(0.0);
        }
        if fb[m * bins..(m + 1) * bins].iter().all(|&w| w == 0.0) {
            return Err(Error::config(format!(
                "mel band {m} covers no FFT bin; lower n_mels or raise n_fft"
            )));
        }
    }
    Ok(fb)
}

/// Projects a `[n_fft/2 + 1, T]` power spectrogram onto `n_mels` bands.
pub fn mel_project(spec: &Tensor, n_mels: usize) -> Result<Tensor> {
    if spec.rank() != 2 || spec.shape()[0] < 3 {
        return Err(Error::data(format!("expected a [bins, frames] spectrogram, got {:?}", spec.shape())));
    }
    let bins = spec.shape()[0];
    let fb = mel_filterbank(n_mels, 2 * (bins - 1), SAMPLE_RATE)?;
    let fb = Tensor::new(&[n_mels, bins], fb)?;
    Ok(moed_tensor::no_grad(|| ops::matmul(&fb, spec))?)
}

/// `ln(x + floor)` elementwise.
pub fn log_compress(spec: &Tensor, floor: f64) -> Tensor {
    let data = spec.values().iter().map(|&v| (v + floor).ln()).collect();
    Tensor::new(spec.shape(), data).expect("shape preserved")
}

/// Zero mean, unit variance over the whole map. A constant map becomes zeros.
pub fn standardize(feat: &Tensor) -> Tensor {
    let v = feat.values();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + 1e-8).sqrt();
    let data = v.iter().map(|x| (x - mean) * inv).collect();
    Tensor::new(feat.shape(), data).expect("shape preserved")
}

/// Full feature pipeline for one fixed-length waveform: power spectrogram,
/// optional mel projection, log compression, per-utterance standardization.
pub fn extract(samples: &[f64], cfg: &FeatureConfig, kind: FeatureKind) -> Result<Tensor> {
    let power = stft_power(samples, cfg)?;
    let spec = match kind {
        FeatureKind::Mel => mel_project(&power, cfg.n_mels)?,
        FeatureKind::Linear => power,
    };
    Ok(standardize(&log_compress(&spec, cfg.log_floor)))
}

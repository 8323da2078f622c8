use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use moed_tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{self, wav, FeatureConfig, FeatureKind, SpecAugmentConfig, Waveform};
use crate::corpus::{CorpusManifest, Split};
use crate::error::{Error, Result};
use crate::experts::{FeatureBatch, FeatureSet, FAKE, REAL};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Item {
    pub id: String,
    pub label: usize,
    pub domain: String,
    pub split: Split,
}

/// Training-time perturbations: additive noise on the waveform followed by
/// time/frequency masking of every feature map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub spec_augment: SpecAugmentConfig,
    /// Probability of adding noise to an utterance.
    pub noise_prob: f64,
    /// SNR range in dB, sampled uniformly.
    pub snr_db: [f64; 2],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            spec_augment: SpecAugmentConfig::default(),
            noise_prob: 0.5,
            snr_db: [10.0, 30.0],
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.noise_prob) {
            return Err(Error::config(format!("noise_prob {} outside [0, 1]", self.noise_prob)));
        }
        if !(self.snr_db[0] <= self.snr_db[1]) {
            return Err(Error::config(format!("snr_db range {:?} is empty", self.snr_db)));
        }
        Ok(())
    }
}

/// Utterances with their feature maps computed once and held as `f32`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub items: Vec<Item>,
    pub features: FeatureConfig,
    shapes: BTreeMap<FeatureKind, (usize, usize)>,
    maps: BTreeMap<FeatureKind, Vec<Arc<[f32]>>>,
    waves: Option<Vec<Arc<[f32]>>>,
}

fn to_f32(v: &[f64]) -> Arc<[f32]> {
    v.iter().map(|&x| x as f32).collect()
}

impl Dataset {
    /// Reads, length-normalizes and featurizes every manifest entry.
    /// Waveforms are retained only when `keep_waveforms` (noise augmentation).
    pub fn load(
        manifest: &CorpusManifest,
        features: &FeatureConfig,
        kinds: &BTreeSet<FeatureKind>,
        keep_waveforms: bool,
    ) -> Result<Self> {
        features.validate()?;
        let loaded = manifest
            .entries
            .par_iter()
            .map(|e| -> Result<(Vec<Arc<[f32]>>, Option<Arc<[f32]>>)> {
                let path = manifest.root.join(&e.path);
                if !path.exists() {
                    return Err(Error::Missing(path));
                }
                let w = audio::fix_length(&wav::read(&path)?, features.input_len)?;
                let maps = kinds
                    .iter()
                    .map(|&k| Ok(to_f32(&audio::extract(&w.samples, features, k)?.values())))
                    .collect::<Result<Vec<_>>>()?;
                Ok((maps, keep_waveforms.then(|| to_f32(&w.samples))))
            })
            .collect::<Result<Vec<_>>>()?;
        let frames = features.frames(features.input_len);
        let mut maps: BTreeMap<FeatureKind, Vec<Arc<[f32]>>> = kinds.iter().map(|&k| (k, Vec::new())).collect();
        let mut waves = keep_waveforms.then(Vec::new);
        for (per_kind, w) in loaded {
            for (k, m) in kinds.iter().zip(per_kind) {
                maps.get_mut(k).expect("kind registered").push(m);
            }
            if let (Some(ws), Some(w)) = (waves.as_mut(), w) {
                ws.push(w);
            }
        }
        let items = manifest
            .entries
            .iter()
            .map(|e| Item {
                id: e.id().to_string(),
                label: e.label,
                domain: e.domain.clone(),
                split: e.split,
            })
            .collect();
        Ok(Dataset {
            items,
            features: features.clone(),
            shapes: kinds.iter().map(|&k| (k, (features.bins(k), frames))).collect(),
            maps,
            waves,
        })
    }

    /// A dataset over precomputed `[bins, frames]` maps, one per item and kind.
    pub fn from_maps(
        items: Vec<Item>,
        features: FeatureConfig,
        maps: BTreeMap<FeatureKind, Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let frames = features.frames(features.input_len);
        let mut shapes = BTreeMap::new();
        let mut stored = BTreeMap::new();
        for (kind, per_item) in maps {
            let shape = (features.bins(kind), frames);
            if per_item.len() != items.len() || per_item.iter().any(|m| m.len() != shape.0 * shape.1) {
                return Err(Error::data(format!("{kind} maps do not match {} items of {shape:?}", items.len())));
            }
            shapes.insert(kind, shape);
            stored.insert(kind, per_item.iter().map(|m| to_f32(m)).collect());
        }
        Ok(Dataset {
            items,
            features,
            shapes,
            maps: stored,
            waves: None,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn kinds(&self) -> BTreeSet<FeatureKind> {
        self.maps.keys().copied().collect()
    }

    /// Item indices in `split`, optionally restricted to some domains.
    pub fn indices(&self, split: Split, domains: Option<&[String]>) -> Vec<usize> {
        (0..self.items.len())
            .filter(|&i| {
                let it = &self.items[i];
                it.split == split && domains.is_none_or(|ds| ds.contains(&it.domain))
            })
            .collect()
    }

    pub fn labels(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.items[i].label).collect()
    }

    fn check_kinds(&self, kinds: &BTreeSet<FeatureKind>) -> Result<()> {
        match kinds.iter().find(|k| !self.maps.contains_key(k)) {
            Some(k) => Err(Error::Routing {
                expected: k.to_string(),
                got: format!("{:?}", self.kinds()),
            }),
            None => Ok(()),
        }
    }

    fn stack(&self, kind: FeatureKind, rows: Vec<Vec<f64>>) -> Result<FeatureBatch> {
        let (f, t) = self.shapes[&kind];
        let b = rows.len();
        let data = Tensor::new(&[b, 1, f, t], rows.concat())?;
        FeatureBatch::new(kind, data)
    }

    /// Cached features of the given items as `[B, 1, F, T]` batches.
    pub fn batch(&self, idx: &[usize], kinds: &BTreeSet<FeatureKind>) -> Result<FeatureSet> {
        self.check_kinds(kinds)?;
        let mut set = FeatureSet::new();
        for &kind in kinds {
            let rows = idx
                .iter()
                .map(|&i| self.maps[&kind][i].iter().map(|&v| f64::from(v)).collect())
                .collect();
            set.insert(self.stack(kind, rows)?)?;
        }
        Ok(set)
    }

    /// Like [`batch`](Self::batch) with noise and masking applied per item.
    pub fn augmented_batch(
        &self,
        idx: &[usize],
        kinds: &BTreeSet<FeatureKind>,
        aug: &AugmentConfig,
        rng: &mut impl Rng,
    ) -> Result<FeatureSet> {
        self.check_kinds(kinds)?;
        let (f0, f1) = (aug.snr_db[0], aug.snr_db[1]);
        let mut rows: BTreeMap<FeatureKind, Vec<Vec<f64>>> = kinds.iter().map(|&k| (k, Vec::new())).collect();
        for &i in idx {
            let noisy = match &self.waves {
                Some(ws) if rng.random::<f64>() < aug.noise_prob => {
                    let w = Waveform::new(ws[i].iter().map(|&v| f64::from(v)).collect());
                    let snr = if f1 > f0 { rng.random_range(f0..f1) } else { f0 };
                    Some(audio::add_noise(&w, snr, rng)?)
                }
                _ => None,
            };
            for &kind in kinds {
                let (f, t) = self.shapes[&kind];
                let map = match &noisy {
                    Some(w) => audio::extract(&w.samples, &self.features, kind)?,
                    None => Tensor::new(&[f, t], self.maps[&kind][i].iter().map(|&v| f64::from(v)).collect())?,
                };
                let (masked, _) = audio::spec_augment(&map, &aug.spec_augment, rng)?;
                rows.get_mut(&kind).expect("kind registered").push(masked.to_vec());
            }
        }
        let mut set = FeatureSet::new();
        for (kind, r) in rows {
            set.insert(self.stack(kind, r)?)?;
        }
        Ok(set)
    }
}

/// One epoch of class-balanced batches as positions into `labels`.
///
/// The epoch covers the majority class once; each class is drawn from
/// back-to-back reshuffled passes, so the minority class is resampled.
pub fn balanced_batches(labels: &[usize], batch_size: usize, rng: &mut impl Rng) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 || batch_size % 2 != 0 {
        return Err(Error::config(format!("batch size {batch_size} must be even and positive")));
    }
    let by_class = |c: usize| -> Vec<usize> { (0..labels.len()).filter(|&i| labels[i] == c).collect() };
    let (reals, fakes) = (by_class(REAL), by_class(FAKE));
    if reals.is_empty() || fakes.is_empty() {
        return Err(Error::data(format!(
            "class-balanced batches need both classes, got {} real and {} fake",
            reals.len(),
            fakes.len()
        )));
    }
    if reals.len() + fakes.len() != labels.len() {
        return Err(Error::data("labels must be 0 or 1"));
    }
    let half = batch_size / 2;
    let n_batches = reals.len().max(fakes.len()).div_ceil(half);
    let mut draw = |pool: &[usize]| -> Vec<usize> {
        let mut out = Vec::with_capacity(n_batches * half);
        while out.len() < n_batches * half {
            let mut pass = pool.to_vec();
            pass.shuffle(rng);
            out.extend(pass);
        }
        out.truncate(n_batches * half);
        out
    };
    let (r, f) = (draw(&reals), draw(&fakes));
    let mut batches = Vec::with_capacity(n_batches);
    for k in 0..n_batches {
        let mut b: Vec<usize> = r[k * half..(k + 1) * half].iter().chain(&f[k * half..(k + 1) * half]).copied().collect();
        b.shuffle(rng);
        let fakes_in = b.iter().filter(|&&i| labels[i] == FAKE).count();
        assert_eq!(fakes_in, half, "unbalanced batch");
        batches.push(b);
    }
    Ok(batches)
}

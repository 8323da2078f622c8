use moed_tensor::nn::{join, Conv2d, Linear, Module, Role};
use moed_tensor::{ops, Tensor};
use rand::Rng;

use super::ExpertConfig;
use crate::error::{Error, Result};

const BASE: [usize; 4] = [16, 24, 32, 16];
const STRIDES: [usize; 4] = [2, 2, 1, 1];

/// Four conv → MFM → 2×2 max-pool stages, time-averaged, then an MFM
/// fully connected layer producing the embedding.
#[derive(Debug, Clone)]
pub struct Lcnn {
    stages: Vec<Conv2d>,
    fc: Linear,
}

impl Lcnn {
    pub fn new(cfg: &ExpertConfig, bins: usize, rng: &mut impl Rng) -> Result<Self> {
        let channels = cfg.channels(&BASE)?;
        let mut stages = Vec::with_capacity(4);
        let mut in_ch = 1;
        let mut height = bins;
        for (&c, &stride) in channels.iter().zip(&STRIDES) {
            stages.push(Conv2d::he(in_ch, 2 * c, 3, stride, 1, true, rng));
            height = (height - 1) / stride + 1;
            height /= 2;
            if height == 0 {
                return Err(Error::config(format!("{bins} frequency bins are too few for the LCNN")));
            }
            in_ch = c;
        }
        let flat = in_ch * height;
        Ok(Lcnn {
            stages,
            fc: Linear::scaled_uniform(flat, 2 * cfg.embed_dim, rng),
        })
    }

    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for conv in &self.stages {
            h = ops::max_feature_map(&conv.forward(&h)?)?;
            h = ops::max_pool2d(&h, (2, 2), (2, 2))?;
        }
        let h = ops::mean_axis(&h, 3)?;
        let b = h.shape()[0];
        let h = ops::reshape(&h, &[b, h.numel() / b])?;
        let y = self.fc.forward(&h)?;
        let y = ops::max_feature_map(&ops::reshape(&y, &[b, y.shape()[1], 1, 1])?)?;
        Ok(ops::reshape(&y, &[b, y.shape()[1]])?)
    }
}

impl Module for Lcnn {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, Role)) {
        for (i, conv) in self.stages.iter().enumerate() {
            conv.visit(&join(prefix, &format!("conv{i}")), f);
        }
        self.fc.visit(&join(prefix, "fc"), f);
    }
}

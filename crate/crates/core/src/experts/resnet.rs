use moed_tensor::nn::{join, BatchNorm2d, Conv2d, Linear, Module, Role};
use moed_tensor::{ops, Tensor};
use rand::Rng;

use super::ExpertConfig;
use crate::error::{Error, Result};

const BASE: [usize; 4] = [8, 16, 32, 64];
const BLOCKS_PER_STAGE: usize = 2;
const STEM_POOL: usize = 4;

#[derive(Debug, Clone)]
pub struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    shortcut: Option<(Conv2d, BatchNorm2d)>,
}

impl BasicBlock {
    fn new(in_ch: usize, out_ch: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let shortcut = (stride != 1 || in_ch != out_ch)
            .then(|| (Conv2d::he(in_ch, out_ch, 1, stride, 0, false, rng), BatchNorm2d::new(out_ch)));
        BasicBlock {
            conv1: Conv2d::he(in_ch, out_ch, 3, stride, 1, false, rng),
            bn1: BatchNorm2d::new(out_ch),
            conv2: Conv2d::he(out_ch, out_ch, 3, 1, 1, false, rng),
            bn2: BatchNorm2d::new(out_ch),
            shortcut,
        }
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let h = ops::relu(&self.bn1.forward(&self.conv1.forward(x)?, train)?);
        let h = self.bn2.forward(&self.conv2.forward(&h)?, train)?;
        let skip = match &self.shortcut {
            Some((conv, bn)) => bn.forward(&conv.forward(x)?, train)?,
            None => x.clone(),
        };
        Ok(ops::relu(&ops::add(&h, &skip)?))
    }
}

impl Module for BasicBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, Role)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.bn1.visit(&join(prefix, "bn1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.bn2.visit(&join(prefix, "bn2"), f);
        if let Some((conv, bn)) = &self.shortcut {
            conv.visit(&join(prefix, "shortcut.conv"), f);
            bn.visit(&join(prefix, "shortcut.bn"), f);
        }
    }
}

/// Strided stem with 4×4 max-pool, four stages of two basic blocks, global
/// average pooling and a ReLU embedding layer.
#[derive(Debug, Clone)]
pub struct ResNet {
    stem: Conv2d,
    stem_bn: BatchNorm2d,
    blocks: Vec<BasicBlock>,
    fc: Linear,
}

impl ResNet {
    pub fn new(cfg: &ExpertConfig, bins: usize, rng: &mut impl Rng) -> Result<Self> {
        let channels = cfg.channels(&BASE)?;
        if (bins - 1) / 2 + 1 < STEM_POOL {
            return Err(Error::config(format!("{bins} frequency bins are too few for the ResNet stem")));
        }
        let stem = Conv2d::he(1, channels[0], 3, 2, 1, false, rng);
        let stem_bn = BatchNorm2d::new(channels[0]);
        let mut blocks = Vec::new();
        let mut in_ch = channels[0];
        for (stage, &c) in channels.iter().enumerate() {
            for b in 0..BLOCKS_PER_STAGE {
                let stride = if stage > 0 && b == 0 { 2 } else { 1 };
                blocks.push(BasicBlock::new(in_ch, c, stride, rng));
                in_ch = c;
            }
        }
        Ok(ResNet {
            stem,
            stem_bn,
            blocks,
            fc: Linear::scaled_uniform(in_ch, cfg.embed_dim, rng),
        })
    }

    pub fn embed(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let h = ops::relu(&self.stem_bn.forward(&self.stem.forward(x)?, train)?);
        let mut h = ops::max_pool2d(&h, (STEM_POOL, STEM_POOL), (STEM_POOL, STEM_POOL))?;
        for block in &self.blocks {
            h = block.forward(&h, train)?;
        }
        let &[b, c, hh, ww] = h.shape() else { unreachable!("conv output is rank 4") };
        let pooled = ops::mean_axis(&ops::reshape(&h, &[b, c, hh * ww])?, 2)?;
        Ok(ops::relu(&self.fc.forward(&pooled)?))
    }
}

impl Module for ResNet {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, Role)) {
        self.stem.visit(&join(prefix, "stem"), f);
        self.stem_bn.visit(&join(prefix, "stem_bn"), f);
        for (i, block) in self.blocks.iter().enumerate() {
            block.visit(&join(prefix, &format!("block{i}")), f);
        }
        self.fc.visit(&join(prefix, "fc"), f);
    }
}

//! Seeded finite-difference checks of every differentiable op.
//!
//! Each case builds random leaf inputs and a scalar objective; [`run`]
//! reports the worst relative error over a number of instances.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::ops::{self, BatchNormMode};
use crate::{Result, Tensor};

/// Inputs plus the scalar objective evaluated on them.
pub type Instance = (Vec<Tensor>, Box<dyn Fn(&[Tensor]) -> Result<Tensor>>);

pub struct Case {
    pub name: &'static str,
    /// Worst error expected of a correct backward rule at `h = 1e-5`.
    pub tolerance: f64,
    make: fn(&mut StdRng, u64) -> Instance,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub name: &'static str,
    pub tolerance: f64,
    pub worst_rel_error: f64,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.worst_rel_error < self.tolerance
    }
}

fn param(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::param(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape matches")
}

/// Weighted sum so every output element gets a distinct upstream gradient.
pub fn project(y: &Tensor, seed: u64) -> Result<Tensor> {
    let mut rng = StdRng::seed_from_u64(seed ^ 0xabcdef);
    let w: Vec<f64> = (0..y.numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
    Ok(ops::sum_all(&ops::mul(y, &Tensor::new(y.shape(), w)?)?))
}

macro_rules! case {
    ($name:expr, $tol:expr, $make:expr) => {
        Case {
            name: $name,
            tolerance: $tol,
            make: $make,
        }
    };
}

pub fn cases() -> Vec<Case> {
    vec![
        case!("matmul", 1e-6, |rng, seed| {
            let inputs = vec![param(rng, &[4, 5]), param(rng, &[5, 3])];
            (inputs, Box::new(move |t| project(&ops::matmul(&t[0], &t[1])?, seed)))
        }),
        case!("matmul/sum", 1e-6, |rng, _| {
            let inputs = vec![param(rng, &[4, 5]), param(rng, &[5, 3])];
            (inputs, Box::new(|t| Ok(ops::sum_all(&ops::matmul(&t[0], &t[1])?))))
        }),
        case!("bmm", 1e-6, |rng, seed| {
            let inputs = vec![param(rng, &[2, 3, 4]), param(rng, &[2, 4, 2])];
            (inputs, Box::new(move |t| project(&ops::bmm(&t[0], &t[1])?, seed)))
        }),
        case!("linear", 1e-6, |rng, seed| {
            let inputs = vec![param(rng, &[2, 3, 5]), param(rng, &[4, 5]), param(rng, &[4])];
            (inputs, Box::new(move |t| project(&ops::linear(&t[0], &t[1], Some(&t[2]))?, seed)))
        }),
        case!("conv2d", 1e-5, |rng, seed| {
            let stride = 1 + (seed % 2) as usize;
            let pad = (seed % 3) as usize;
            let inputs = vec![param(rng, &[2, 2, 6, 5]), param(rng, &[3, 2, 3, 2]), param(rng, &[3])];
            (
                inputs,
                Box::new(move |t| project(&ops::conv2d(&t[0], &t[1], Some(&t[2]), stride, pad)?, seed)),
            )
        }),
        case!("max_feature_map", 1e-6, |rng, seed| {
            let inputs = vec![param(rng, &[2, 4, 3, 3])];
            (inputs, Box::new(move |t| project(&ops::max_feature_map(&t[0])?, seed)))
        }),
        case!("max_pool2d", 1e-6, |rng, seed| {
            let inputs = vec![param(rng, &[2, 2, 6, 7])];
            (inputs, Box::new(move |t| project(&ops::max_pool2d(&t[0], (2, 3), (2, 2))?, seed)))
        }),
        case!("relu", 1e-6, |rng, seed| {
            let inputs = vec![param(rng, &[3, 7])];
            (inputs, Box::new(move |t| project(&ops::relu(&t[0]), seed)))
        }),
        case!("layer_norm", 1e-5, |rng, seed| {
            let inputs = vec![param(rng, &[3, 2, 6]), param(rng, &[6]), param(rng, &[6])];
            (inputs, Box::new(move |t| project(&ops::layer_norm(&t[0], &t[1], &t[2], 1e-5)?, seed)))
        }),
        case!("batch_norm2d/train", 1e-4, |rng, seed| {
            let inputs = vec![param(rng, &[3, 2, 3, 2]), param(rng, &[2]), param(rng, &[2])];
            let rm = Tensor::zeros(&[2]);
            let rv = Tensor::full(&[2], 1.0);
            (
                inputs,
                Box::new(move |t| {
                    let mode = BatchNormMode::Train { momentum: 0.1 };
                    project(&ops::batch_norm2d(&t[0], &t[1], &t[2], &rm, &rv, mode, 1e-5)?, seed)
                }),
            )
        }),
        case!("batch_norm2d/eval", 1e-6, |rng, seed| {
            let inputs = vec![param(rng, &[2, 3, 2, 2]), param(rng, &[3]), param(rng, &[3])];
            let rm = Tensor::new(&[3], vec![0.1, -0.2, 0.3]).expect("shape matches");
            let rv = Tensor::new(&[3], vec![0.5, 1.5, 2.0]).expect("shape matches");
            (
                inputs,
                Box::new(move |t| {
                    project(&ops::batch_norm2d(&t[0], &t[1], &t[2], &rm, &rv, BatchNormMode::Eval, 1e-5)?, seed)
                }),
            )
        }),
        case!("softmax", 1e-6, |rng, seed| {
            let axis = (seed % 3) as usize;
            let inputs = vec![param(rng, &[2, 3, 4])];
            (inputs, Box::new(move |t| project(&ops::softmax(&t[0], axis)?, seed)))
        }),
        case!("cross_entropy_smoothed", 1e-6, |rng, _| {
            let labels: Vec<usize> = (0..5).map(|_| rng.random_range(0..2)).collect();
            let inputs = vec![param(rng, &[5, 2])];
            (inputs, Box::new(move |t| ops::cross_entropy_smoothed(&t[0], &labels, 0.2)))
        }),
        case!("mean_axis", 1e-6, |rng, seed| {
            let axis = (seed % 3) as usize;
            let inputs = vec![param(rng, &[2, 3, 4])];
            (inputs, Box::new(move |t| project(&ops::mean_axis(&t[0], axis)?, seed)))
        }),
        case!("mean_all", 1e-6, |rng, _| {
            let inputs = vec![param(rng, &[3, 3])];
            (inputs, Box::new(|t| Ok(ops::mean_all(&t[0]))))
        }),
        case!("permute", 1e-6, |rng, seed| {
            let inputs = vec![param(rng, &[2, 3, 4])];
            (inputs, Box::new(move |t| project(&ops::permute(&t[0], &[1, 2, 0])?, seed)))
        }),
        case!("transpose", 1e-6, |rng, seed| {
            let inputs = vec![param(rng, &[2, 3, 4])];
            (inputs, Box::new(move |t| project(&ops::transpose(&t[0], 0, 2)?, seed)))
        }),
        case!("reshape", 1e-6, |rng, seed| {
            let inputs = vec![param(rng, &[2, 6])];
            (inputs, Box::new(move |t| project(&ops::reshape(&t[0], &[3, 4])?, seed)))
        }),
        case!("concat", 1e-6, |rng, seed| {
            let inputs = vec![param(rng, &[2, 1, 3]), param(rng, &[2, 2, 3])];
            (
                inputs,
                Box::new(move |t| project(&ops::concat(&[t[0].clone(), t[1].clone()], 1)?, seed)),
            )
        }),
        case!("add/sub/mul/scale", 1e-6, |rng, seed| {
            let inputs = vec![param(rng, &[3, 4]), param(rng, &[3, 4])];
            (
                inputs,
                Box::new(move |t| {
                    let s = ops::add(&t[0], &t[1])?;
                    let d = ops::sub(&t[0], &ops::scale(&t[1], 0.5))?;
                    project(&ops::mul(&s, &d)?, seed)
                }),
            )
        }),
        case!("scaled_dot_product_attention", 1e-6, |rng, seed| {
            let inputs = vec![param(rng, &[2, 3, 4]), param(rng, &[2, 3, 4]), param(rng, &[2, 3, 5])];
            (
                inputs,
                Box::new(move |t| project(&ops::scaled_dot_product_attention(&t[0], &t[1], &t[2])?, seed)),
            )
        }),
        // One tensor feeding three paths that meet again.
        case!("shared input", 1e-6, |rng, seed| {
            let inputs = vec![param(rng, &[3, 3])];
            (
                inputs,
                Box::new(move |t| {
                    let x = &t[0];
                    let a = ops::matmul(x, x)?;
                    let c = ops::add(&ops::mul(&a, &ops::relu(x))?, x)?;
                    project(&c, seed)
                }),
            )
        }),
    ]
}

/// Checks one case on `instances` seeded draws with step `h`.
pub fn run(case: &Case, instances: u64, h: f64) -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for seed in 0..instances {
        let mut rng = StdRng::seed_from_u64(seed * 7919 + 1);
        let (inputs, f) = (case.make)(&mut rng, seed);
        let report = super::check(|| f(&inputs), &inputs, h)?;
        worst = worst.max(report.rel_error());
    }
    Ok(Outcome {
        name: case.name,
        tolerance: case.tolerance,
        worst_rel_error: worst,
    })
}

/// Every case with the step used by the test suite.
pub fn run_all(instances: u64) -> Result<Vec<Outcome>> {
    cases().iter().map(|c| run(c, instances, 1e-5)).collect()
}

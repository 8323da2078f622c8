//! Central finite-difference gradient checks.
//!
//! The numeric side only ever calls the forward function, so it is
//! independent of every backward rule it verifies.

pub mod suite;

use crate::error::TensorError;
use crate::Tensor;

/// Outcome of one comparison between analytic and numeric gradients.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradReport {
    /// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)`, or the absolute error norm when both
    /// gradients are (numerically) zero.
    pub fn rel_error(&self) -> f64 {
        let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
        let diff = norm(&mut self.analytic.iter().zip(&self.numeric).map(|(a, n)| a - n));
        let scale = norm(&mut self.analytic.iter().copied()).max(norm(&mut self.numeric.iter().copied()));
        if scale < 1e-12 {
            diff
        } else {
            diff / scale
        }
    }

    pub fn max_abs_error(&self) -> f64 {
        self.analytic
            .iter()
            .zip(&self.numeric)
            .map(|(a, n)| (a - n).abs())
            .fold(0.0, f64::max)
    }
}

/// Compares gradients of the scalar `f` w.r.t. every element of `inputs`.
///
/// `inputs` must be leaf tensors that require gradients. Their values are
/// perturbed in place by `±h` and restored afterwards.
pub fn check<F, E>(f: F, inputs: &[Tensor], h: f64) -> Result<GradReport, E>
where
    F: Fn() -> Result<Tensor, E>,
    E: From<TensorError>,
{
    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j)))
        .collect();
    check_coords(f, inputs, &coords, h)
}

/// Like [`check`], restricted to the given `(input index, element index)`
/// coordinates.
pub fn check_coords<F, E>(
    f: F,
    inputs: &[Tensor],
    coords: &[(usize, usize)],
    h: f64,
) -> Result<GradReport, E>
where
    F: Fn() -> Result<Tensor, E>,
    E: From<TensorError>,
{
    inputs.iter().for_each(Tensor::zero_grad);
    f()?.backward()?;
    let grads: Vec<Vec<f64>> = inputs
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();
    inputs.iter().for_each(Tensor::zero_grad);

    let mut analytic = Vec::with_capacity(coords.len());
    let mut numeric = Vec::with_capacity(coords.len());
    for &(i, j) in coords {
        let t = &inputs[i];
        let original = t.to_vec();
        let mut probe = original.clone();
        probe[j] = original[j] + h;
        t.set_values(probe.clone())?;
        let plus = crate::no_grad(&f)?.item();
        probe[j] = original[j] - h;
        t.set_values(probe)?;
        let minus = crate::no_grad(&f)?.item();
        t.set_values(original)?;
        analytic.push(grads[i][j]);
        numeric.push((plus - minus) / (2.0 * h));
    }
    Ok(GradReport { analytic, numeric })
}

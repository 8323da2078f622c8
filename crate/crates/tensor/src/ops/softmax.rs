use crate::error::{Result, TensorError};
use crate::kernels::split_axis;
use crate::Tensor;

pub(crate) fn softmax_buffer(x: &[f64], outer: usize, len: usize, inner: usize) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let max = (0..len).map(|k| x[at(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for k in 0..len {
                let e = (x[at(k)] - max).exp();
                y[at(k)] = e;
                total += e;
            }
            for k in 0..len {
                y[at(k)] /= total;
            }
        }
    }
    y
}

/// Numerically stable softmax along `axis` (max-subtracted).
pub fn softmax(a: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= a.rank() {
        return Err(TensorError::shape(
            "softmax",
            format!("axis {axis} out of range for {:?}", a.shape()),
        ));
    }
    let (outer, len, inner) = split_axis(a.shape(), axis);
    let y = std::sync::Arc::new(softmax_buffer(&a.values(), outer, len, inner));
    let y_bw = y.clone();
    Ok(Tensor::from_op(
        "softmax",
        a.shape().to_vec(),
        y.as_ref().clone(),
        vec![a.clone()],
        move |g| {
            let mut gx = vec![0.0; g.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * len + k) * inner + i;
                    let dot: f64 = (0..len).map(|k| g[at(k)] * y_bw[at(k)]).sum();
                    for k in 0..len {
                        gx[at(k)] = y_bw[at(k)] * (g[at(k)] - dot);
                    }
                }
            }
            vec![Some(gx)]
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_on_equal_inputs() {
        let s = softmax(&Tensor::zeros(&[3]), 0).unwrap();
        for v in s.to_vec() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let s = softmax(&Tensor::new(&[2], vec![1000.0, 0.0]).unwrap(), 0).unwrap();
        let v = s.to_vec();
        assert!(v.iter().all(|x| x.is_finite()));
        assert!((v[0] - 1.0).abs() < 1e-15);
        assert!(v[1] < 1e-300);
    }

    #[test]
    fn rows_of_first_axis() {
        let a = Tensor::new(&[2, 2], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let s = softmax(&a, 0).unwrap().to_vec();
        for v in s {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn bad_axis() {
        assert!(softmax(&Tensor::zeros(&[2]), 1).is_err());
    }
}

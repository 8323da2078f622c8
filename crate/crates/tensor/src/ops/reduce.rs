use crate::error::{Result, TensorError};
use crate::kernels::split_axis;
use crate::Tensor;

pub fn sum_all(a: &Tensor) -> Tensor {
    let n = a.numel();
    let s = a.values().iter().sum();
    Tensor::from_op("sum_all", vec![1], vec![s], vec![a.clone()], move |g| {
        vec![Some(vec![g[0]; n])]
    })
}

pub fn mean_all(a: &Tensor) -> Tensor {
    let n = a.numel();
    let s: f64 = a.values().iter().sum::<f64>() / n as f64;
    Tensor::from_op("mean_all", vec![1], vec![s], vec![a.clone()], move |g| {
        vec![Some(vec![g[0] / n as f64; n])]
    })
}

/// Mean over one axis; the axis is removed from the result shape.
pub fn mean_axis(a: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= a.rank() {
        return Err(TensorError::shape(
            "mean_axis",
            format!("axis {axis} out of range for {:?}", a.shape()),
        ));
    }
    let (outer, len, inner) = split_axis(a.shape(), axis);
    let av = a.values();
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for k in 0..len {
            let src = &av[(o * len + k) * inner..(o * len + k + 1) * inner];
            out[o * inner..(o + 1) * inner]
                .iter_mut()
                .zip(src)
                .for_each(|(d, s)| *d += s);
        }
    }
    let inv = 1.0 / len as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    let mut shape = a.shape().to_vec();
    shape.remove(axis);
    if shape.is_empty() {
        shape.push(1);
    }
    Ok(Tensor::from_op("mean_axis", shape, out, vec![a.clone()], move |g| {
        let mut gx = vec![0.0; outer * len * inner];
        for o in 0..outer {
            for k in 0..len {
                let dst = &mut gx[(o * len + k) * inner..(o * len + k + 1) * inner];
                dst.iter_mut()
                    .zip(&g[o * inner..(o + 1) * inner])
                    .for_each(|(d, s)| *d = s * inv);
            }
        }
        vec![Some(gx)]
    }))
}

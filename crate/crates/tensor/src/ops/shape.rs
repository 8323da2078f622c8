use crate::error::{Result, TensorError};
use crate::kernels::split_axis;
use crate::Tensor;

pub fn reshape(a: &Tensor, shape: &[usize]) -> Result<Tensor> {
    if shape.iter().product::<usize>() != a.numel() || shape.contains(&0) {
        return Err(TensorError::mismatch("reshape", a.shape(), shape));
    }
    Ok(Tensor::from_op(
        "reshape",
        shape.to_vec(),
        a.to_vec(),
        vec![a.clone()],
        |g| vec![Some(g.to_vec())],
    ))
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Gathers `src` (laid out as `shape`) into the axis order `axes`.
fn permute_buffer(src: &[f64], shape: &[usize], axes: &[usize]) -> Vec<f64> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let gather: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(src.len());
    let mut idx = vec![0usize; out_shape.len()];
    let mut offset = 0usize;
    for _ in 0..src.len() {
        out.push(src[offset]);
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            offset += gather[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= gather[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    out
}

/// Reorders axes; `axes[i]` is the input axis that becomes output axis `i`.
pub fn permute(a: &Tensor, axes: &[usize]) -> Result<Tensor> {
    let rank = a.rank();
    let mut seen = vec![false; rank];
    if axes.len() != rank || axes.iter().any(|&x| x >= rank || std::mem::replace(&mut seen[x], true)) {
        return Err(TensorError::shape(
            "permute",
            format!("{axes:?} is not a permutation of {rank} axes"),
        ));
    }
    let shape = a.shape().to_vec();
    let out_shape: Vec<usize> = axes.iter().map(|&x| shape[x]).collect();
    let data = permute_buffer(&a.values(), &shape, axes);
    let mut inverse = vec![0; rank];
    for (i, &x) in axes.iter().enumerate() {
        inverse[x] = i;
    }
    let out_shape_bw = out_shape.clone();
    Ok(Tensor::from_op(
        "permute",
        out_shape,
        data,
        vec![a.clone()],
        move |g| vec![Some(permute_buffer(g, &out_shape_bw, &inverse))],
    ))
}

/// Swaps two axes.
pub fn transpose(a: &Tensor, d0: usize, d1: usize) -> Result<Tensor> {
    let mut axes: Vec<usize> = (0..a.rank()).collect();
    if d0 >= axes.len() || d1 >= axes.len() {
        return Err(TensorError::shape(
            "transpose",
            format!("axes ({d0}, {d1}) out of range for {:?}", a.shape()),
        ));
    }
    axes.swap(d0, d1);
    permute(a, &axes)
}

/// Joins tensors along `axis`; all other extents must agree.
pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| TensorError::shape("concat", "no inputs"))?;
    if axis >= first.rank() {
        return Err(TensorError::shape(
            "concat",
            format!("axis {axis} out of range for {:?}", first.shape()),
        ));
    }
    for p in parts {
        let ok = p.rank() == first.rank()
            && p.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(i, (x, y))| i == axis || x == y);
        if !ok {
            return Err(TensorError::mismatch("concat", first.shape(), p.shape()));
        }
    }
    let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
    let total: usize = lens.iter().sum();
    let (outer, _, inner) = split_axis(first.shape(), axis);
    let mut shape = first.shape().to_vec();
    shape[axis] = total;

    let mut data = vec![0.0; outer * total * inner];
    let mut start = 0;
    for (p, &len) in parts.iter().zip(&lens) {
        let pv = p.values();
        for o in 0..outer {
            let dst = (o * total + start) * inner;
            data[dst..dst + len * inner].copy_from_slice(&pv[o * len * inner..(o + 1) * len * inner]);
        }
        start += len;
    }
    Ok(Tensor::from_op("concat", shape, data, parts.to_vec(), move |g| {
        let mut grads = Vec::with_capacity(lens.len());
        let mut start = 0;
        for &len in &lens {
            let mut gp = vec![0.0; outer * len * inner];
            for o in 0..outer {
                let src = (o * total + start) * inner;
                gp[o * len * inner..(o + 1) * len * inner].copy_from_slice(&g[src..src + len * inner]);
            }
            grads.push(Some(gp));
            start += len;
        }
        grads
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transpose_2d() {
        let a = Tensor::new(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let t = transpose(&a, 0, 1).unwrap();
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.to_vec(), vec![1., 4., 2., 5., 3., 6.]);
    }

    #[test]
    fn permute_round_trips_through_inverse() {
        let a = Tensor::new(&[2, 3, 4], (0..24).map(f64::from).collect()).unwrap();
        let p = permute(&a, &[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        let back = permute(&p, &[1, 2, 0]).unwrap();
        assert_eq!(back.to_vec(), a.to_vec());
    }

    #[test]
    fn permute_rejects_repeated_axes() {
        let a = Tensor::zeros(&[2, 2]);
        assert!(permute(&a, &[0, 0]).is_err());
    }

    #[test]
    fn concat_middle_axis() {
        let a = Tensor::new(&[2, 1, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::new(&[2, 2, 2], vec![5., 6., 7., 8., 9., 10., 11., 12.]).unwrap();
        let c = concat(&[a, b], 1).unwrap();
        assert_eq!(c.shape(), &[2, 3, 2]);
        assert_eq!(
            c.to_vec(),
            vec![1., 2., 5., 6., 7., 8., 3., 4., 9., 10., 11., 12.]
        );
    }

    #[test]
    fn concat_rejects_mismatched_extents() {
        let a = Tensor::zeros(&[2, 2]);
        let b = Tensor::zeros(&[3, 2]);
        assert!(concat(&[a, b], 1).is_err());
    }
}

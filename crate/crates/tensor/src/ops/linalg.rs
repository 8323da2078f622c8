use crate::error::{Result, TensorError};
use crate::kernels::gemm;
use crate::ops::{scale, softmax, transpose};
use crate::Tensor;

/// Matrix product of `P × Q` and `Q × R` tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(TensorError::mismatch("matmul", a.shape(), b.shape()));
    }
    let (p, q, r) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let (av, bv) = (a.values(), b.values());
    let mut out = vec![0.0; p * r];
    gemm(p, q, r, &av, false, &bv, false, &mut out, 0.0);
    Ok(Tensor::from_op(
        "matmul",
        vec![p, r],
        out,
        vec![a.clone(), b.clone()],
        move |g| {
            let mut ga = vec![0.0; p * q];
            gemm(p, r, q, g, false, &bv, true, &mut ga, 0.0);
            let mut gb = vec![0.0; q * r];
            gemm(q, p, r, &av, true, g, false, &mut gb, 0.0);
            vec![Some(ga), Some(gb)]
        },
    ))
}

/// Batched product of `B × P × Q` and `B × Q × R` tensors.
pub fn bmm(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 3 || b.rank() != 3 || a.shape()[0] != b.shape()[0] || a.shape()[2] != b.shape()[1]
    {
        return Err(TensorError::mismatch("bmm", a.shape(), b.shape()));
    }
    let (n, p, q, r) = (a.shape()[0], a.shape()[1], a.shape()[2], b.shape()[2]);
    let (av, bv) = (a.values(), b.values());
    let mut out = vec![0.0; n * p * r];
    for i in 0..n {
        gemm(
            p,
            q,
            r,
            &av[i * p * q..(i + 1) * p * q],
            false,
            &bv[i * q * r..(i + 1) * q * r],
            false,
            &mut out[i * p * r..(i + 1) * p * r],
            0.0,
        );
    }
    Ok(Tensor::from_op(
        "bmm",
        vec![n, p, r],
        out,
        vec![a.clone(), b.clone()],
        move |g| {
            let mut ga = vec![0.0; n * p * q];
            let mut gb = vec![0.0; n * q * r];
            for i in 0..n {
                let gi = &g[i * p * r..(i + 1) * p * r];
                gemm(
                    p,
                    r,
                    q,
                    gi,
                    false,
                    &bv[i * q * r..(i + 1) * q * r],
                    true,
                    &mut ga[i * p * q..(i + 1) * p * q],
                    0.0,
                );
                gemm(
                    q,
                    p,
                    r,
                    &av[i * p * q..(i + 1) * p * q],
                    true,
                    gi,
                    false,
                    &mut gb[i * q * r..(i + 1) * q * r],
                    0.0,
                );
            }
            vec![Some(ga), Some(gb)]
        },
    ))
}

/// Affine map over the last axis: `x · weightᵀ + bias`, with `weight` stored
/// as `out × in`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let in_dim = *x.shape().last().unwrap_or(&0);
    if weight.rank() != 2 || weight.shape()[1] != in_dim {
        return Err(TensorError::mismatch("linear", x.shape(), weight.shape()));
    }
    let out_dim = weight.shape()[0];
    if let Some(b) = bias {
        if b.shape() != [out_dim] {
            return Err(TensorError::mismatch("linear", weight.shape(), b.shape()));
        }
    }
    let rows = x.numel() / in_dim;
    let (xv, wv) = (x.values(), weight.values());
    let mut out = vec![0.0; rows * out_dim];
    if let Some(b) = bias {
        let bv = b.values();
        for row in out.chunks_mut(out_dim) {
            row.copy_from_slice(&bv);
        }
    }
    gemm(rows, in_dim, out_dim, &xv, false, &wv, true, &mut out, 1.0);

    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = out_dim;
    let mut parents = vec![x.clone(), weight.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    let has_bias = bias.is_some();
    Ok(Tensor::from_op("linear", shape, out, parents, move |g| {
        let mut gx = vec![0.0; rows * in_dim];
        gemm(rows, out_dim, in_dim, g, false, &wv, false, &mut gx, 0.0);
        let mut gw = vec![0.0; out_dim * in_dim];
        gemm(out_dim, rows, in_dim, g, true, &xv, false, &mut gw, 0.0);
        let mut grads = vec![Some(gx), Some(gw)];
        if has_bias {
            let mut gb = vec![0.0; out_dim];
            for row in g.chunks(out_dim) {
                gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
            }
            grads.push(Some(gb));
        }
        grads
    }))
}

/// `softmax(q · kᵀ / √d) · v` over `B × N × d` batches, composed from
/// differentiable primitives.
pub fn scaled_dot_product_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    if q.rank() != 3 || q.shape() != k.shape() {
        return Err(TensorError::mismatch("attention", q.shape(), k.shape()));
    }
    if v.rank() != 3 || v.shape()[..2] != q.shape()[..2] {
        return Err(TensorError::mismatch("attention", q.shape(), v.shape()));
    }
    let d = q.shape()[2] as f64;
    let scores = scale(&bmm(q, &transpose(k, 1, 2)?)?, 1.0 / d.sqrt());
    let weights = softmax(&scores, 2)?;
    bmm(&weights, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul_returns_input() {
        let eye = Tensor::new(&[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let x = Tensor::new(&[3, 3], (0..9).map(|i| i as f64 * 1.5 - 4.0).collect()).unwrap();
        assert_eq!(matmul(&eye, &x).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn small_matmul_by_hand() {
        let a = Tensor::new(&[2, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::new(&[2, 1], vec![1., 1.]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.to_vec(), vec![3., 7.]);
    }

    #[test]
    fn matmul_mismatch_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let msg = matmul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn linear_adds_bias_per_row() {
        let x = Tensor::new(&[2, 2], vec![1., 0., 0., 1.]).unwrap();
        let w = Tensor::new(&[3, 2], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::new(&[3], vec![0.5, 0.5, 0.5]).unwrap();
        let y = linear(&x, &w, Some(&b)).unwrap();
        assert_eq!(y.to_vec(), vec![1.5, 3.5, 5.5, 2.5, 4.5, 6.5]);
    }

    #[test]
    fn attention_with_identical_keys_averages_values() {
        let q = Tensor::new(&[1, 2, 2], vec![1., 2., -1., 0.5]).unwrap();
        let k = Tensor::new(&[1, 2, 2], vec![1., 1., 1., 1.]).unwrap();
        let v = Tensor::new(&[1, 2, 1], vec![2., 4.]).unwrap();
        let out = scaled_dot_product_attention(&q, &k, &v).unwrap();
        for o in out.to_vec() {
            assert!((o - 3.0).abs() < 1e-12);
        }
    }
}

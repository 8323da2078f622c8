use crate::error::{Result, TensorError};
use crate::kernels::{col2im, gemm, im2col};
use crate::Tensor;

fn dims4(op: &'static str, x: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match *x.shape() {
        [b, c, h, w] => Ok((b, c, h, w)),
        _ => Err(TensorError::shape(
            op,
            format!("expected B×C×H×W input, got {:?}", x.shape()),
        )),
    }
}

/// 2-D cross-correlation with zero padding.
///
/// `x` is `B × C × H × W`, `kernel` is `O × C × kh × kw` and the optional
/// `bias` has length `O`. Output extents are `⌊(H + 2·pad − kh)/stride⌋ + 1`.
pub fn conv2d(
    x: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let (b, c, h, w) = dims4("conv2d", x)?;
    let (o, kc, kh, kw) = dims4("conv2d", kernel)?;
    if kc != c {
        return Err(TensorError::mismatch("conv2d", x.shape(), kernel.shape()));
    }
    if stride == 0 {
        return Err(TensorError::shape("conv2d", "stride must be positive"));
    }
    if kh > h + 2 * pad || kw > w + 2 * pad {
        return Err(TensorError::mismatch("conv2d", x.shape(), kernel.shape()));
    }
    if let Some(bias) = bias {
        if bias.shape() != [o] {
            return Err(TensorError::mismatch("conv2d", kernel.shape(), bias.shape()));
        }
    }
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let l = oh * ow;
    let ckk = c * kh * kw;
    let (xv, kv) = (x.values(), kernel.values());

    let mut out = vec![0.0; b * o * l];
    let mut cols = vec![0.0; ckk * l];
    for bi in 0..b {
        im2col(
            &xv[bi * c * h * w..(bi + 1) * c * h * w],
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            oh,
            ow,
            &mut cols,
        );
        let dst = &mut out[bi * o * l..(bi + 1) * o * l];
        if let Some(bias) = bias {
            let bv = bias.values();
            for (oi, plane) in dst.chunks_mut(l).enumerate() {
                plane.iter_mut().for_each(|v| *v = bv[oi]);
            }
        }
        gemm(o, ckk, l, &kv, false, &cols, false, dst, 1.0);
    }

    let mut parents = vec![x.clone(), kernel.clone()];
    if let Some(bias) = bias {
        parents.push(bias.clone());
    }
    let has_bias = bias.is_some();
    Ok(Tensor::from_op(
        "conv2d",
        vec![b, o, oh, ow],
        out,
        parents,
        move |g| {
            let mut gx = vec![0.0; b * c * h * w];
            let mut gk = vec![0.0; o * ckk];
            let mut cols = vec![0.0; ckk * l];
            let mut gcols = vec![0.0; ckk * l];
            for bi in 0..b {
                let gb = &g[bi * o * l..(bi + 1) * o * l];
                im2col(
                    &xv[bi * c * h * w..(bi + 1) * c * h * w],
                    c,
                    h,
                    w,
                    kh,
                    kw,
                    stride,
                    pad,
                    oh,
                    ow,
                    &mut cols,
                );
                gemm(o, l, ckk, gb, false, &cols, true, &mut gk, 1.0);
                gemm(ckk, o, l, &kv, true, gb, false, &mut gcols, 0.0);
                col2im(
                    &gcols,
                    c,
                    h,
                    w,
                    kh,
                    kw,
                    stride,
                    pad,
                    oh,
                    ow,
                    &mut gx[bi * c * h * w..(bi + 1) * c * h * w],
                );
            }
            let mut grads = vec![Some(gx), Some(gk)];
            if has_bias {
                let mut gbias = vec![0.0; o];
                for bi in 0..b {
                    for (oi, acc) in gbias.iter_mut().enumerate() {
                        let base = (bi * o + oi) * l;
                        *acc += g[base..base + l].iter().sum::<f64>();
                    }
                }
                grads.push(Some(gbias));
            }
            grads
        },
    ))
}

/// Max pooling without padding; the first maximum in a window wins ties.
pub fn max_pool2d(x: &Tensor, kernel: (usize, usize), stride: (usize, usize)) -> Result<Tensor> {
    let (b, c, h, w) = dims4("max_pool2d", x)?;
    let (kh, kw) = kernel;
    let (sh, sw) = stride;
    if kh == 0 || kw == 0 || sh == 0 || sw == 0 {
        return Err(TensorError::shape("max_pool2d", "kernel and stride must be positive"));
    }
    if kh > h || kw > w {
        return Err(TensorError::shape(
            "max_pool2d",
            format!("window {kh}×{kw} larger than input {h}×{w}"),
        ));
    }
    let oh = (h - kh) / sh + 1;
    let ow = (w - kw) / sw + 1;
    let xv = x.values();
    let mut out = vec![0.0; b * c * oh * ow];
    let mut argmax = vec![0usize; out.len()];
    for plane in 0..b * c {
        let src = &xv[plane * h * w..(plane + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut at = 0;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let idx = (oy * sh + ky) * w + ox * sw + kx;
                        if src[idx] > best {
                            best = src[idx];
                            at = idx;
                        }
                    }
                }
                let o = (plane * oh + oy) * ow + ox;
                out[o] = best;
                argmax[o] = plane * h * w + at;
            }
        }
    }
    let n_in = xv.len();
    Ok(Tensor::from_op(
        "max_pool2d",
        vec![b, c, oh, ow],
        out,
        vec![x.clone()],
        move |g| {
            let mut gx = vec![0.0; n_in];
            for (gi, &src) in g.iter().zip(&argmax) {
                gx[src] += gi;
            }
            vec![Some(gx)]
        },
    ))
}

/// Max-Feature-Map: elementwise max of the two channel halves of a
/// `B × 2C × H × W` tensor. On exact ties the gradient goes to the first half.
pub fn max_feature_map(x: &Tensor) -> Result<Tensor> {
    let (b, c2, h, w) = dims4("max_feature_map", x)?;
    if c2 % 2 != 0 {
        return Err(TensorError::shape(
            "max_feature_map",
            format!("channel count {c2} is odd"),
        ));
    }
    let c = c2 / 2;
    let hw = h * w;
    let xv = x.values();
    let mut out = vec![0.0; b * c * hw];
    let mut take_first = vec![true; out.len()];
    for bi in 0..b {
        for ci in 0..c {
            let first = &xv[(bi * c2 + ci) * hw..(bi * c2 + ci + 1) * hw];
            let second = &xv[(bi * c2 + ci + c) * hw..(bi * c2 + ci + c + 1) * hw];
            let base = (bi * c + ci) * hw;
            for k in 0..hw {
                let first_wins = first[k] >= second[k];
                take_first[base + k] = first_wins;
                out[base + k] = if first_wins { first[k] } else { second[k] };
            }
        }
    }
    let n_in = xv.len();
    Ok(Tensor::from_op(
        "max_feature_map",
        vec![b, c, h, w],
        out,
        vec![x.clone()],
        move |g| {
            let mut gx = vec![0.0; n_in];
            for bi in 0..b {
                for ci in 0..c {
                    let base = (bi * c + ci) * hw;
                    for k in 0..hw {
                        let ch = if take_first[base + k] { ci } else { ci + c };
                        gx[(bi * c2 + ch) * hw + k] = g[base + k];
                    }
                }
            }
            vec![Some(gx)]
        },
    ))
}

use crate::error::{Result, TensorError};
use crate::Tensor;

/// Normalises each row over the last axis, then applies `gamma`/`beta`.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let d = *x.shape().last().unwrap_or(&0);
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(TensorError::mismatch("layer_norm", x.shape(), gamma.shape()));
    }
    let rows = x.numel() / d;
    let (xv, gv, bv) = (x.values(), gamma.values(), beta.values());
    let mut xhat = vec![0.0; rows * d];
    let mut inv_std = vec![0.0; rows];
    let mut out = vec![0.0; rows * d];
    for r in 0..rows {
        let row = &xv[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std[r] = is;
        for j in 0..d {
            let h = (row[j] - mean) * is;
            xhat[r * d + j] = h;
            out[r * d + j] = gv[j] * h + bv[j];
        }
    }
    Ok(Tensor::from_op(
        "layer_norm",
        x.shape().to_vec(),
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        move |g| {
            let mut gx = vec![0.0; rows * d];
            let mut gg = vec![0.0; d];
            let mut gb = vec![0.0; d];
            for r in 0..rows {
                let gr = &g[r * d..(r + 1) * d];
                let hr = &xhat[r * d..(r + 1) * d];
                let mut mean_dh = 0.0;
                let mut mean_dh_h = 0.0;
                for j in 0..d {
                    gg[j] += gr[j] * hr[j];
                    gb[j] += gr[j];
                    let dh = gr[j] * gv[j];
                    mean_dh += dh;
                    mean_dh_h += dh * hr[j];
                }
                mean_dh /= d as f64;
                mean_dh_h /= d as f64;
                for j in 0..d {
                    let dh = gr[j] * gv[j];
                    gx[r * d + j] = inv_std[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                }
            }
            vec![Some(gx), Some(gg), Some(gb)]
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BatchNormMode {
    /// Batch statistics; running statistics are updated with `momentum`.
    Train { momentum: f64 },
    /// Running statistics only.
    Eval,
}

/// Per-channel normalisation of a `B × C × H × W` tensor.
pub fn batch_norm2d(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &Tensor,
    running_var: &Tensor,
    mode: BatchNormMode,
    eps: f64,
) -> Result<Tensor> {
    if x.rank() != 4 {
        return Err(TensorError::shape(
            "batch_norm2d",
            format!("expected B×C×H×W input, got {:?}", x.shape()),
        ));
    }
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    for t in [gamma, beta, running_mean, running_var] {
        if t.shape() != [c] {
            return Err(TensorError::mismatch("batch_norm2d", x.shape(), t.shape()));
        }
    }
    let hw = h * w;
    let n = b * hw;
    let (xv, gv, bv) = (x.values(), gamma.values(), beta.values());

    let (mean, var) = match mode {
        BatchNormMode::Train { momentum } => {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ci in 0..c {
                let mut s = 0.0;
                for bi in 0..b {
                    s += xv[(bi * c + ci) * hw..(bi * c + ci + 1) * hw].iter().sum::<f64>();
                }
                let m = s / n as f64;
                let mut ss = 0.0;
                for bi in 0..b {
                    ss += xv[(bi * c + ci) * hw..(bi * c + ci + 1) * hw]
                        .iter()
                        .map(|v| (v - m).powi(2))
                        .sum::<f64>();
                }
                mean[ci] = m;
                var[ci] = ss / n as f64;
            }
            let unbias = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
            let rm: Vec<f64> = running_mean
                .values()
                .iter()
                .zip(&mean)
                .map(|(r, m)| (1.0 - momentum) * r + momentum * m)
                .collect();
            let rv: Vec<f64> = running_var
                .values()
                .iter()
                .zip(&var)
                .map(|(r, v)| (1.0 - momentum) * r + momentum * v * unbias)
                .collect();
            running_mean.set_values(rm)?;
            running_var.set_values(rv)?;
            (mean, var)
        }
        BatchNormMode::Eval => (running_mean.to_vec(), running_var.to_vec()),
    };

    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0; xv.len()];
    let mut out = vec![0.0; xv.len()];
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * hw;
            for k in base..base + hw {
                let hval = (xv[k] - mean[ci]) * inv_std[ci];
                xhat[k] = hval;
                out[k] = gv[ci] * hval + bv[ci];
            }
        }
    }
    let train = matches!(mode, BatchNormMode::Train { .. });
    Ok(Tensor::from_op(
        "batch_norm2d",
        x.shape().to_vec(),
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        move |g| {
            let mut gg = vec![0.0; c];
            let mut gb = vec![0.0; c];
            for bi in 0..b {
                for ci in 0..c {
                    let base = (bi * c + ci) * hw;
                    for k in base..base + hw {
                        gg[ci] += g[k] * xhat[k];
                        gb[ci] += g[k];
                    }
                }
            }
            let mut gx = vec![0.0; g.len()];
            for bi in 0..b {
                for ci in 0..c {
                    let base = (bi * c + ci) * hw;
                    let scale = gv[ci] * inv_std[ci];
                    if train {
                        let mg = gb[ci] / n as f64;
                        let mgh = gg[ci] / n as f64;
                        for k in base..base + hw {
                            gx[k] = scale * (g[k] - mg - xhat[k] * mgh);
                        }
                    } else {
                        for k in base..base + hw {
                            gx[k] = scale * g[k];
                        }
                    }
                }
            }
            vec![Some(gx), Some(gg), Some(gb)]
        },
    ))
}

use crate::error::{Result, TensorError};
use crate::ops::softmax::softmax_buffer;
use crate::Tensor;

/// Mean label-smoothed cross-entropy over a `B × K` batch of logits.
///
/// Targets are `q = (1 − eps)·onehot(label) + eps/K`.
pub fn cross_entropy_smoothed(logits: &Tensor, labels: &[usize], eps: f64) -> Result<Tensor> {
    if !(0.0..1.0).contains(&eps) {
        return Err(TensorError::Config(format!(
            "label smoothing {eps} outside [0, 1)"
        )));
    }
    let (b, k) = match *logits.shape() {
        [b, k] => (b, k),
        _ => {
            return Err(TensorError::shape(
                "cross_entropy_smoothed",
                format!("expected B×K logits, got {:?}", logits.shape()),
            ))
        }
    };
    if labels.len() != b {
        return Err(TensorError::mismatch(
            "cross_entropy_smoothed",
            logits.shape(),
            &[labels.len()],
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(TensorError::Config(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    let probs = softmax_buffer(&logits.values(), b, k, 1);
    let mut targets = vec![eps / k as f64; b * k];
    for (i, &l) in labels.iter().enumerate() {
        targets[i * k + l] += 1.0 - eps;
    }
    let lv = logits.values();
    let mut loss = 0.0;
    for i in 0..b {
        let row = &lv[i * k..(i + 1) * k];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for j in 0..k {
            loss -= targets[i * k + j] * (row[j] - lse);
        }
    }
    loss /= b as f64;
    Ok(Tensor::from_op(
        "cross_entropy_smoothed",
        vec![1],
        vec![loss],
        vec![logits.clone()],
        move |g| {
            let s = g[0] / b as f64;
            let gx = probs
                .iter()
                .zip(&targets)
                .map(|(p, q)| (p - q) * s)
                .collect();
            vec![Some(gx)]
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_smoothing_is_plain_cross_entropy() {
        let p: f64 = 0.9;
        // logits [ln p, ln(1-p)] give softmax [p, 1-p]
        let logits = Tensor::new(&[1, 2], vec![p.ln(), (1.0 - p).ln()]).unwrap();
        let loss = cross_entropy_smoothed(&logits, &[0], 0.0).unwrap().item();
        assert!((loss + p.ln()).abs() < 1e-12);
    }

    #[test]
    fn uniform_prediction_costs_ln2() {
        let logits = Tensor::zeros(&[2, 2]);
        for label in [0, 1] {
            let loss = cross_entropy_smoothed(&logits, &[label, label], 0.2).unwrap().item();
            assert!((loss - 2f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothed_value_by_hand() {
        // q = [0.1, 0.9], p = softmax([2, 0])
        let logits = Tensor::new(&[1, 2], vec![2.0, 0.0]).unwrap();
        let loss = cross_entropy_smoothed(&logits, &[1], 0.2).unwrap().item();
        let z = 2f64.exp() + 1.0;
        let p0 = 2f64.exp() / z;
        let p1 = 1.0 / z;
        let expect = -(0.1 * p0.ln() + 0.9 * p1.ln());
        assert!((loss - expect).abs() < 1e-12, "{loss} vs {expect}");
        assert!((loss - 1.926_928_0).abs() < 1e-6);
    }

    #[test]
    fn smoothing_range_checked() {
        let logits = Tensor::zeros(&[1, 2]);
        assert!(matches!(
            cross_entropy_smoothed(&logits, &[0], 1.0),
            Err(TensorError::Config(_))
        ));
        assert!(cross_entropy_smoothed(&logits, &[0], -0.1).is_err());
        assert!(cross_entropy_smoothed(&logits, &[2], 0.1).is_err());
    }
}

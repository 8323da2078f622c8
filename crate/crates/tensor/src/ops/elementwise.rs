use crate::error::{Result, TensorError};
use crate::Tensor;

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::mismatch(op, a.shape(), b.shape()));
    }
    Ok(())
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("add", a, b)?;
    let (av, bv) = (a.values(), b.values());
    let data = av.iter().zip(bv.iter()).map(|(x, y)| x + y).collect();
    Ok(Tensor::from_op(
        "add",
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        |g| vec![Some(g.to_vec()), Some(g.to_vec())],
    ))
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("sub", a, b)?;
    let (av, bv) = (a.values(), b.values());
    let data = av.iter().zip(bv.iter()).map(|(x, y)| x - y).collect();
    Ok(Tensor::from_op(
        "sub",
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        |g| vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())],
    ))
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("mul", a, b)?;
    let (av, bv) = (a.values(), b.values());
    let data = av.iter().zip(bv.iter()).map(|(x, y)| x * y).collect();
    Ok(Tensor::from_op(
        "mul",
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        move |g| {
            let ga = g.iter().zip(bv.iter()).map(|(g, y)| g * y).collect();
            let gb = g.iter().zip(av.iter()).map(|(g, x)| g * x).collect();
            vec![Some(ga), Some(gb)]
        },
    ))
}

pub fn scale(a: &Tensor, factor: f64) -> Tensor {
    let data = a.values().iter().map(|x| x * factor).collect();
    Tensor::from_op("scale", a.shape().to_vec(), data, vec![a.clone()], move |g| {
        vec![Some(g.iter().map(|v| v * factor).collect())]
    })
}

pub fn relu(a: &Tensor) -> Tensor {
    let av = a.values();
    let data = av.iter().map(|&x| x.max(0.0)).collect();
    Tensor::from_op("relu", a.shape().to_vec(), data, vec![a.clone()], move |g| {
        let gx = g
            .iter()
            .zip(av.iter())
            .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
            .collect();
        vec![Some(gx)]
    })
}

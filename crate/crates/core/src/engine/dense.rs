use super::tensor::{axpy, dot};
use super::{Real, Tensor};
use crate::{Error, Result};

fn dense_dims<S: Real>(op: &'static str, x: &Tensor<S>, weight: &Tensor<S>) -> Result<(usize, usize)> {
    weight.expect_rank(op, 2)?;
    let (m, n) = (weight.shape()[0], weight.shape()[1]);
    if x.len() != n {
        return Err(Error::shape(op, format!("input of {n}"), x.len()));
    }
    Ok((m, n))
}

/// `out = weight · x + bias`; `x` is read flat whatever its shape.
pub fn dense_forward<S: Real>(x: &Tensor<S>, weight: &Tensor<S>, bias: &Tensor<S>) -> Result<Tensor<S>> {
    let (m, _) = dense_dims("dense_forward", x, weight)?;
    if bias.len() != m {
        return Err(Error::shape("dense_forward", format!("bias of {m}"), bias.len()));
    }
    let mut out = Tensor::zeros(&[m]);
    for (i, o) in out.data_mut().iter_mut().enumerate() {
        *o = bias.data()[i] + dot(weight.row(i), x.data());
    }
    Ok(out)
}

/// Returns `(grad_x, grad_weight, grad_bias)`; `grad_x` takes the shape of `x`.
pub fn dense_backward<S: Real>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    grad_out: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>)> {
    let (m, n) = dense_dims("dense_backward", x, weight)?;
    if grad_out.len() != m {
        return Err(Error::shape(
            "dense_backward",
            format!("grad_out of {m}"),
            grad_out.len(),
        ));
    }
    let mut grad_x = Tensor::zeros(x.shape());
    let mut grad_w = Tensor::zeros(&[m, n]);
    for (i, &g) in grad_out.data().iter().enumerate() {
        axpy(g, x.data(), grad_w.row_mut(i));
        axpy(g, weight.row(i), grad_x.data_mut());
    }
    let grad_b = Tensor::from_vec(&[m], grad_out.data().to_vec())?;
    Ok((grad_x, grad_w, grad_b))
}

//! Stride-1 1D convolution ("valid") and its full transposed counterpart.
//!
//! Layouts: activations are `[channels, length]`; convolution weights are
//! `[filters, in_channels, kernel]`; transposed-convolution weights are
//! `[in_filters, out_channels, kernel]`. No kernel flip (cross-correlation).

use super::tensor::{axpy, dot};
use super::{Real, Tensor};
use crate::{Error, Result};

fn conv_dims<S: Real>(
    op: &'static str,
    x: &Tensor<S>,
    weight: &Tensor<S>,
    bias: Option<&Tensor<S>>,
) -> Result<(usize, usize, usize, usize)> {
    x.expect_rank(op, 2)?;
    weight.expect_rank(op, 3)?;
    let (c_in, l_in) = (x.shape()[0], x.shape()[1]);
    let (f, wc, k) = (weight.shape()[0], weight.shape()[1], weight.shape()[2]);
    if wc != c_in {
        return Err(Error::shape(op, format!("{c_in} weight input channels"), wc));
    }
    if let Some(bias) = bias {
        bias.expect_rank(op, 1)?;
        if bias.len() != f {
            return Err(Error::shape(op, format!("bias of {f}"), bias.len()));
        }
    }
    if l_in < k {
        return Err(Error::shape(op, format!("input length >= kernel {k}"), l_in));
    }
    Ok((c_in, l_in, f, k))
}

/// `out[f, t] = bias[f] + Σ_{c,j} weight[f, c, j] · x[c, t + j]`.
pub fn conv1d_forward<S: Real>(x: &Tensor<S>, weight: &Tensor<S>, bias: &Tensor<S>) -> Result<Tensor<S>> {
    let (c_in, l_in, filters, k) = conv_dims("conv1d_forward", x, weight, Some(bias))?;
    let l_out = l_in - k + 1;
    let mut out = Tensor::zeros(&[filters, l_out]);
    let w = weight.data();
    for f in 0..filters {
        let row = out.row_mut(f);
        row.fill(bias.data()[f]);
        for c in 0..c_in {
            let xc = x.row(c);
            for j in 0..k {
                let wv = w[(f * c_in + c) * k + j];
                axpy(wv, &xc[j..j + l_out], row);
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv1d_forward`] w.r.t. input, weight and bias.
pub fn conv1d_backward<S: Real>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    grad_out: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>)> {
    let (c_in, l_in, filters, k) = conv_dims("conv1d_backward", x, weight, None)?;
    let l_out = l_in - k + 1;
    if grad_out.shape() != [filters, l_out] {
        return Err(Error::shape(
            "conv1d_backward",
            format!("grad_out [{filters}, {l_out}]"),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let mut grad_x = Tensor::zeros(&[c_in, l_in]);
    let mut grad_w = Tensor::zeros(&[filters, c_in, k]);
    let mut grad_b = Tensor::zeros(&[filters]);
    let w = weight.data();
    for f in 0..filters {
        let g = grad_out.row(f);
        grad_b.data_mut()[f] = g.iter().copied().sum();
        for c in 0..c_in {
            let xc = x.row(c);
            for j in 0..k {
                let idx = (f * c_in + c) * k + j;
                grad_w.data_mut()[idx] = dot(g, &xc[j..j + l_out]);
                axpy(w[idx], g, &mut grad_x.row_mut(c)[j..j + l_out]);
            }
        }
    }
    Ok((grad_x, grad_w, grad_b))
}

fn transpose_dims<S: Real>(
    op: &'static str,
    x: &Tensor<S>,
    weight: &Tensor<S>,
) -> Result<(usize, usize, usize, usize)> {
    x.expect_rank(op, 2)?;
    weight.expect_rank(op, 3)?;
    let (f, l_in) = (x.shape()[0], x.shape()[1]);
    let (wf, c_out, k) = (weight.shape()[0], weight.shape()[1], weight.shape()[2]);
    if wf != f {
        return Err(Error::shape(op, format!("{f} weight input filters"), wf));
    }
    Ok((f, l_in, c_out, k))
}

/// Full transposed convolution, output length `L_in + k − 1`:
/// `out[c, t] = bias[c] + Σ_{f,j} weight[f, c, j] · x[f, t − j]`.
pub fn conv1d_transpose_forward<S: Real>(x: &Tensor<S>, weight: &Tensor<S>, bias: &Tensor<S>) -> Result<Tensor<S>> {
    let (filters, l_in, c_out, k) = transpose_dims("conv1d_transpose_forward", x, weight)?;
    bias.expect_rank("conv1d_transpose_forward", 1)?;
    if bias.len() != c_out {
        return Err(Error::shape(
            "conv1d_transpose_forward",
            format!("bias of {c_out}"),
            bias.len(),
        ));
    }
    let l_out = l_in + k - 1;
    let mut out = Tensor::zeros(&[c_out, l_out]);
    for c in 0..c_out {
        out.row_mut(c).fill(bias.data()[c]);
    }
    let w = weight.data();
    for f in 0..filters {
        let xf = x.row(f);
        for c in 0..c_out {
            let row = out.row_mut(c);
            for j in 0..k {
                axpy(w[(f * c_out + c) * k + j], xf, &mut row[j..j + l_in]);
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv1d_transpose_forward`] w.r.t. input, weight and bias.
pub fn conv1d_transpose_backward<S: Real>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    grad_out: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>)> {
    let (filters, l_in, c_out, k) = transpose_dims("conv1d_transpose_backward", x, weight)?;
    let l_out = l_in + k - 1;
    if grad_out.shape() != [c_out, l_out] {
        return Err(Error::shape(
            "conv1d_transpose_backward",
            format!("grad_out [{c_out}, {l_out}]"),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let mut grad_x = Tensor::zeros(&[filters, l_in]);
    let mut grad_w = Tensor::zeros(&[filters, c_out, k]);
    let mut grad_b = Tensor::zeros(&[c_out]);
    for c in 0..c_out {
        grad_b.data_mut()[c] = grad_out.row(c).iter().copied().sum();
    }
    let w = weight.data();
    for f in 0..filters {
        let xf = x.row(f);
        for c in 0..c_out {
            let g = grad_out.row(c);
            for j in 0..k {
                let idx = (f * c_out + c) * k + j;
                let window = &g[j..j + l_in];
                grad_w.data_mut()[idx] = dot(xf, window);
                axpy(w[idx], window, grad_x.row_mut(f));
            }
        }
    }
    Ok((grad_x, grad_w, grad_b))
}

use super::{Real, RngState, Tensor};
use crate::{Error, Result};

/// Whether stochastic layers are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

pub fn relu<S: Real>(x: &Tensor<S>) -> Tensor<S> {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v <= S::zero() {
            *v = S::zero();
        }
    }
    out
}

/// Passes the gradient where the pre-activation is strictly positive; the
/// subgradient at exactly zero is zero.
pub fn relu_backward<S: Real>(pre: &Tensor<S>, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
    if pre.len() != grad_out.len() {
        return Err(Error::shape("relu_backward", pre.len(), grad_out.len()));
    }
    let mut grad = grad_out.clone();
    for (g, &p) in grad.data_mut().iter_mut().zip(pre.data()) {
        if p <= S::zero() {
            *g = S::zero();
        }
    }
    Ok(grad)
}

/// Per-element scale applied by an inverted-dropout pass (`0` or `1/(1−rate)`).
/// `None` means the pass was the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask<S> {
    scale: Option<Vec<S>>,
}

impl<S: Real> DropoutMask<S> {
    pub fn identity() -> Self {
        DropoutMask { scale: None }
    }

    pub fn is_identity(&self) -> bool {
        self.scale.is_none()
    }
}

pub fn dropout<S: Real>(
    x: &Tensor<S>,
    rate: f64,
    mode: Mode,
    rng: &mut RngState,
) -> Result<(Tensor<S>, DropoutMask<S>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Infer || rate == 0.0 {
        return Ok((x.clone(), DropoutMask::identity()));
    }
    let keep_scale = S::from_f64(1.0 / (1.0 - rate));
    let scale: Vec<S> = (0..x.len())
        .map(|_| if rng.uniform() < rate { S::zero() } else { keep_scale })
        .collect();
    let mut out = x.clone();
    for (v, &s) in out.data_mut().iter_mut().zip(&scale) {
        *v *= s;
    }
    Ok((out, DropoutMask { scale: Some(scale) }))
}

pub fn dropout_backward<S: Real>(mask: &DropoutMask<S>, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
    let mut grad = grad_out.clone();
    if let Some(scale) = &mask.scale {
        if scale.len() != grad.len() {
            return Err(Error::shape("dropout_backward", scale.len(), grad.len()));
        }
        for (g, &s) in grad.data_mut().iter_mut().zip(scale) {
            *g *= s;
        }
    }
    Ok(grad)
}

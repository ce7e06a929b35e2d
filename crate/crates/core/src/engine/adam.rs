use super::{Real, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S> {
    pub first: Tensor<S>,
    pub second: Tensor<S>,
}

impl<S: Real> AdamState<S> {
    pub fn for_param(param: &Tensor<S>) -> Self {
        AdamState {
            first: Tensor::zeros(param.shape()),
            second: Tensor::zeros(param.shape()),
        }
    }
}

/// Weight and bias of one layer together with their optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<S> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
    pub weight_state: AdamState<S>,
    pub bias_state: AdamState<S>,
    pub step: u64,
}

impl<S: Real> LayerParams<S> {
    pub fn new(weight: Tensor<S>, bias: Tensor<S>) -> Self {
        LayerParams {
            weight_state: AdamState::for_param(&weight),
            bias_state: AdamState::for_param(&bias),
            weight,
            bias,
            step: 0,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn reset_optimizer(&mut self) {
        self.weight_state = AdamState::for_param(&self.weight);
        self.bias_state = AdamState::for_param(&self.bias);
        self.step = 0;
    }

    pub fn cast<T: Real>(&self) -> LayerParams<T> {
        LayerParams {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
            weight_state: AdamState {
                first: self.weight_state.first.cast(),
                second: self.weight_state.second.cast(),
            },
            bias_state: AdamState {
                first: self.bias_state.first.cast(),
                second: self.bias_state.second.cast(),
            },
            step: self.step,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads<S> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

impl<S: Real> LayerGrads<S> {
    pub fn zeros_like(params: &LayerParams<S>) -> Self {
        LayerGrads {
            weight: Tensor::zeros(params.weight.shape()),
            bias: Tensor::zeros(params.bias.shape()),
        }
    }

    /// `self += scale * other`.
    pub fn accumulate(&mut self, other: &LayerGrads<S>, scale: S) {
        super::tensor::axpy(scale, other.weight.data(), self.weight.data_mut());
        super::tensor::axpy(scale, other.bias.data(), self.bias.data_mut());
    }
}

fn update<S: Real>(param: &mut Tensor<S>, grad: &Tensor<S>, state: &mut AdamState<S>, cfg: &AdamConfig, step: u64) {
    let b1 = S::from_f64(cfg.beta1);
    let b2 = S::from_f64(cfg.beta2);
    let one = S::one();
    let correction1 = S::from_f64(1.0 - cfg.beta1.powi(step as i32));
    let correction2 = S::from_f64(1.0 - cfg.beta2.powi(step as i32));
    let lr = S::from_f64(cfg.learning_rate);
    let eps = S::from_f64(cfg.epsilon);
    let m = state.first.data_mut();
    let v = state.second.data_mut();
    for (i, (p, &g)) in param.data_mut().iter_mut().zip(grad.data()).enumerate() {
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / correction1;
        let v_hat = v[i] / correction2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// One bias-corrected Adam update. The step counter is incremented first.
pub fn adam_step<S: Real>(params: &mut LayerParams<S>, grads: &LayerGrads<S>, cfg: &AdamConfig) -> Result<()> {
    if grads.weight.shape() != params.weight.shape() || grads.bias.shape() != params.bias.shape() {
        return Err(Error::shape(
            "adam_step",
            format!("{:?}/{:?}", params.weight.shape(), params.bias.shape()),
            format!("{:?}/{:?}", grads.weight.shape(), grads.bias.shape()),
        ));
    }
    if !grads.weight.is_finite() || !grads.bias.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    params.step += 1;
    let step = params.step;
    update(&mut params.weight, &grads.weight, &mut params.weight_state, cfg, step);
    update(&mut params.bias, &grads.bias, &mut params.bias_state, cfg, step);
    Ok(())
}

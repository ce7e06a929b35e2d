use serde::{Deserialize, Serialize};

use super::ArchitectureConfig;
use crate::engine::{
    adam_step, conv1d_backward, conv1d_forward, conv1d_transpose_backward, conv1d_transpose_forward, dense_backward,
    dense_forward, dropout, dropout_backward, mse_grad, mse_loss, relu, relu_backward, AdamConfig, DropoutMask,
    LayerGrads, LayerParams, Mode, Real, RngState, Tensor,
};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv1d,
    ConvTranspose1d,
    Dense,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<S> {
    pub name: String,
    pub kind: LayerKind,
    pub params: LayerParams<S>,
    pub relu: bool,
    pub dropout: bool,
}

impl<S: Real> Layer<S> {
    fn in_channels(&self) -> usize {
        self.params.weight.shape()[1 - usize::from(self.kind == LayerKind::ConvTranspose1d)]
    }

    /// Reshape a flat or 2-D activation into the layout this layer consumes.
    fn shape_input(&self, x: Tensor<S>) -> Result<Tensor<S>> {
        match self.kind {
            LayerKind::Dense => {
                let n = x.len();
                x.reshape(&[n])
            }
            LayerKind::Conv1d | LayerKind::ConvTranspose1d => {
                let c = self.in_channels();
                let n = x.len();
                if !n.is_multiple_of(c) {
                    return Err(Error::shape("layer input", format!("multiple of {c}"), n));
                }
                x.reshape(&[c, n / c])
            }
        }
    }

    fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let p = &self.params;
        match self.kind {
            LayerKind::Conv1d => conv1d_forward(x, &p.weight, &p.bias),
            LayerKind::ConvTranspose1d => conv1d_transpose_forward(x, &p.weight, &p.bias),
            LayerKind::Dense => dense_forward(x, &p.weight, &p.bias),
        }
    }

    fn backward(&self, x: &Tensor<S>, grad_out: &Tensor<S>) -> Result<(Tensor<S>, LayerGrads<S>)> {
        let w = &self.params.weight;
        let (gx, gw, gb) = match self.kind {
            LayerKind::Conv1d => conv1d_backward(x, w, grad_out)?,
            LayerKind::ConvTranspose1d => conv1d_transpose_backward(x, w, grad_out)?,
            LayerKind::Dense => dense_backward(x, w, grad_out)?,
        };
        Ok((gx, LayerGrads { weight: gw, bias: gb }))
    }
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct Trace<S> {
    inputs: Vec<Tensor<S>>,
    pre_activations: Vec<Option<Tensor<S>>>,
    masks: Vec<DropoutMask<S>>,
    output_shapes: Vec<Vec<usize>>,
    pub output: Tensor<S>,
}

impl<S: Real> Trace<S> {
    /// Sign pattern of every ReLU pre-activation (`true` where positive).
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.pre_activations
            .iter()
            .flatten()
            .flat_map(|t| t.data().iter().map(|&v| v > S::zero()))
            .collect()
    }
}

/// Deliberate corruption of the backward pass, used as a negative control for
/// gradient checking.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackwardFault {
    /// Negate the input gradient leaving layer `index`.
    FlipInputGradient { index: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<S> {
    pub config: ArchitectureConfig,
    pub layers: Vec<Layer<S>>,
}

fn glorot<S: Real>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut RngState) -> Tensor<S> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| S::from_f64(rng.uniform_range(-limit, limit))).collect();
    Tensor::from_vec(shape, data).expect("positive extents")
}

/// Shape of every layer's weight plus its Glorot fan-in/fan-out.
struct LayerSpec {
    name: &'static str,
    kind: LayerKind,
    weight: Vec<usize>,
    bias: usize,
    fans: (usize, usize),
    relu: bool,
    dropout: bool,
}

fn layer_specs(cfg: &ArchitectureConfig) -> Vec<LayerSpec> {
    let [k1, k2, k3] = cfg.kernels;
    let [f1, f2, f3] = cfg.filters;
    let (c, h, b) = (cfg.channels, cfg.fc_hidden, cfg.bottleneck);
    let flat = cfg.flatten_width().expect("validated config");
    let conv = |name, c_in: usize, f: usize, k: usize| LayerSpec {
        name,
        kind: LayerKind::Conv1d,
        weight: vec![f, c_in, k],
        bias: f,
        fans: (c_in * k, f * k),
        relu: true,
        dropout: true,
    };
    let convt = |name, f_in: usize, c_out: usize, k: usize, relu: bool| LayerSpec {
        name,
        kind: LayerKind::ConvTranspose1d,
        weight: vec![f_in, c_out, k],
        bias: c_out,
        fans: (f_in * k, c_out * k),
        relu,
        dropout: false,
    };
    let dense = |name, n: usize, m: usize, dropout: bool| LayerSpec {
        name,
        kind: LayerKind::Dense,
        weight: vec![m, n],
        bias: m,
        fans: (n, m),
        relu: true,
        dropout,
    };
    vec![
        conv("enc_conv1", c, f1, k1),
        conv("enc_conv2", f1, f2, k2),
        conv("enc_conv3", f2, f3, k3),
        dense("enc_dense1", flat, h, true),
        dense("enc_bottleneck", h, b, false),
        dense("dec_dense1", b, h, true),
        dense("dec_dense2", h, flat, false),
        convt("dec_convt1", f3, f2, k3, true),
        convt("dec_convt2", f2, f1, k2, true),
        convt("dec_output", f1, c, k1, false),
    ]
}

impl<S: Real> Model<S> {
    /// Builds the network with Glorot-uniform weights and zero biases.
    pub fn build(config: &ArchitectureConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = RngState::new(seed);
        let layers = layer_specs(config)
            .into_iter()
            .map(|s| {
                let weight = glorot(&s.weight, s.fans.0, s.fans.1, &mut rng);
                Layer {
                    name: s.name.to_string(),
                    kind: s.kind,
                    params: LayerParams::new(weight, Tensor::zeros(&[s.bias])),
                    relu: s.relu,
                    dropout: s.dropout,
                }
            })
            .collect();
        Ok(Model {
            config: config.clone(),
            layers,
        })
    }

    /// Same architecture with every weight and bias set to zero.
    pub fn zeroed(config: &ArchitectureConfig) -> Result<Self> {
        let mut m = Self::build(config, 0)?;
        for layer in &mut m.layers {
            layer.params.weight.data_mut().fill(S::zero());
        }
        Ok(m)
    }

    pub fn count_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.params.parameter_count()).sum()
    }

    /// `(name, tensor)` pairs in serialization order.
    pub fn tensors(&self) -> impl Iterator<Item = (String, &Tensor<S>)> {
        self.layers.iter().flat_map(|l| {
            [
                (format!("{}.weight", l.name), &l.params.weight),
                (format!("{}.bias", l.name), &l.params.bias),
            ]
        })
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<S>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.params.weight, &mut l.params.bias])
    }

    pub fn cast<T: Real>(&self) -> Model<T> {
        Model {
            config: self.config.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    name: l.name.clone(),
                    kind: l.kind,
                    params: l.params.cast(),
                    relu: l.relu,
                    dropout: l.dropout,
                })
                .collect(),
        }
    }

    fn check_input(&self, x: &Tensor<S>) -> Result<()> {
        let expected = [self.config.channels, self.config.seq_len];
        if x.shape() != expected {
            return Err(Error::shape(
                "model input",
                format!("{expected:?}"),
                format!("{:?}", x.shape()),
            ));
        }
        Ok(())
    }

    pub fn forward_traced(&self, x: &Tensor<S>, mode: Mode, rng: &mut RngState) -> Result<Trace<S>> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(self.layers.len());
        let mut output_shapes = Vec::with_capacity(self.layers.len());
        let mut act = x.clone();
        for layer in &self.layers {
            let input = layer.shape_input(act)?;
            let mut out = layer.forward(&input)?;
            inputs.push(input);
            output_shapes.push(out.shape().to_vec());
            if layer.relu {
                let activated = relu(&out);
                pre_activations.push(Some(out));
                out = activated;
            } else {
                pre_activations.push(None);
            }
            if layer.dropout {
                let (dropped, mask) = dropout(&out, self.config.dropout_rate, mode, rng)?;
                masks.push(mask);
                out = dropped;
            } else {
                masks.push(DropoutMask::identity());
            }
            act = out;
        }
        let output = act.reshape(&[self.config.channels, self.config.seq_len])?;
        Ok(Trace {
            inputs,
            pre_activations,
            masks,
            output_shapes,
            output,
        })
    }

    /// Reconstruction of `x` (shape `channels × seq_len`).
    pub fn forward(&self, x: &Tensor<S>, mode: Mode, rng: &mut RngState) -> Result<Tensor<S>> {
        Ok(self.forward_traced(x, mode, rng)?.output)
    }

    /// Parameter gradients for an upstream gradient on the reconstruction.
    pub fn backward(
        &self,
        trace: &Trace<S>,
        grad_out: &Tensor<S>,
        fault: Option<BackwardFault>,
    ) -> Result<Vec<LayerGrads<S>>> {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            g = dropout_backward(&trace.masks[i], &g.reshape(&trace.output_shapes[i])?)?;
            if let Some(pre) = &trace.pre_activations[i] {
                g = relu_backward(pre, &g)?;
            }
            let (mut gx, lg) = layer.backward(&trace.inputs[i], &g)?;
            if fault == Some(BackwardFault::FlipInputGradient { index: i }) {
                gx.data_mut().iter_mut().for_each(|v| *v = -*v);
            }
            grads.push(lg);
            g = gx;
        }
        grads.reverse();
        Ok(grads)
    }

    /// MSE reconstruction loss of `x` and its parameter gradients.
    pub fn loss_and_grads(&self, x: &Tensor<S>, mode: Mode, rng: &mut RngState) -> Result<(S, Vec<LayerGrads<S>>)> {
        self.loss_and_grads_with_fault(x, mode, rng, None)
    }

    pub fn loss_and_grads_with_fault(
        &self,
        x: &Tensor<S>,
        mode: Mode,
        rng: &mut RngState,
        fault: Option<BackwardFault>,
    ) -> Result<(S, Vec<LayerGrads<S>>)> {
        let trace = self.forward_traced(x, mode, rng)?;
        let loss = mse_loss(&trace.output, x)?;
        let grad = mse_grad(&trace.output, x)?;
        let grads = self.backward(&trace, &grad, fault)?;
        Ok((loss, grads))
    }

    pub fn loss(&self, x: &Tensor<S>) -> Result<S> {
        let mut rng = RngState::new(0);
        mse_loss(&self.forward(x, Mode::Infer, &mut rng)?, x)
    }

    pub fn apply_gradients(&mut self, grads: &[LayerGrads<S>], cfg: &AdamConfig) -> Result<()> {
        if grads.len() != self.layers.len() {
            return Err(Error::shape("apply_gradients", self.layers.len(), grads.len()));
        }
        for (layer, g) in self.layers.iter_mut().zip(grads) {
            adam_step(&mut layer.params, g, cfg)?;
        }
        Ok(())
    }

    pub fn reset_optimizer(&mut self) {
        self.layers.iter_mut().for_each(|l| l.params.reset_optimizer());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Parameter total enumerated straight from the architecture formulas.
    fn enumerate_parameters(c: &ArchitectureConfig) -> usize {
        let [k1, k2, k3] = c.kernels;
        let [f1, f2, f3] = c.filters;
        let l3 = c.seq_len + 3 - k1 - k2 - k3;
        let flat = f3 * l3;
        let conv = |cin: usize, f: usize, k: usize| f * cin * k + f;
        let convt = |fin: usize, cout: usize, k: usize| fin * cout * k + cout;
        let dense = |n: usize, m: usize| m * n + m;
        conv(c.channels, f1, k1)
            + conv(f1, f2, k2)
            + conv(f2, f3, k3)
            + dense(flat, c.fc_hidden)
            + dense(c.fc_hidden, c.bottleneck)
            + dense(c.bottleneck, c.fc_hidden)
            + dense(c.fc_hidden, flat)
            + convt(f3, f2, k3)
            + convt(f2, f1, k2)
            + convt(f1, c.channels, k1)
    }

    #[test]
    fn default_parameter_count() {
        let cfg = ArchitectureConfig::paper();
        let m = Model::<f32>::build(&cfg, 1).unwrap();
        assert_eq!(m.layers[0].params.parameter_count(), 1_600);
        assert_eq!(m.count_parameters(), 4_907_987);
        assert_eq!(enumerate_parameters(&cfg), 4_907_987);
        let conv: usize = m
            .layers
            .iter()
            .filter(|l| l.kind != LayerKind::Dense)
            .map(|l| l.params.parameter_count())
            .sum();
        assert_eq!(conv, 364_163);
        assert_eq!(m.count_parameters() - conv, 4_543_824);
    }

    #[test]
    fn random_configs_match_enumeration() {
        let mut rng = RngState::new(77);
        let mut checked = 0;
        while checked < 50 {
            let cfg = ArchitectureConfig {
                seq_len: 8 + rng.index(40),
                channels: 1 + rng.index(3),
                kernels: [1 + rng.index(5), 1 + rng.index(5), 1 + rng.index(5)],
                filters: [1 + rng.index(5), 1 + rng.index(5), 1 + rng.index(5)],
                fc_hidden: 1 + rng.index(6),
                bottleneck: 1 + rng.index(4),
                dropout_rate: 0.0,
            };
            if cfg.validate().is_err() {
                continue;
            }
            let m = Model::<f64>::build(&cfg, checked).unwrap();
            assert_eq!(m.count_parameters(), enumerate_parameters(&cfg));
            let x = Tensor::zeros(&[cfg.channels, cfg.seq_len]);
            let y = m.forward(&x, Mode::Train, &mut RngState::new(1)).unwrap();
            assert_eq!(y.shape(), x.shape());
            checked += 1;
        }
    }

    #[test]
    fn invalid_config_fails_to_build() {
        let cfg = ArchitectureConfig {
            seq_len: 10,
            ..ArchitectureConfig::paper()
        };
        assert!(Model::<f32>::build(&cfg, 0).is_err());
    }

    #[test]
    fn default_forward_shape_and_determinism() {
        let cfg = ArchitectureConfig::paper();
        let m = Model::<f32>::build(&cfg, 3).unwrap();
        let mut rng = RngState::new(9);
        let x = Tensor::from_vec(&[3, 288], (0..864).map(|_| rng.normal() as f32).collect()).unwrap();
        let a = m.forward(&x, Mode::Infer, &mut RngState::new(1)).unwrap();
        let b = m.forward(&x, Mode::Infer, &mut RngState::new(2)).unwrap();
        assert_eq!(a.shape(), &[3, 288]);
        assert_eq!(a, b);
    }

    #[test]
    fn zero_model_outputs_zero() {
        let m = Model::<f64>::zeroed(&ArchitectureConfig::small()).unwrap();
        let mut rng = RngState::new(4);
        let x = Tensor::from_vec(&[3, 96], (0..288).map(|_| rng.normal()).collect()).unwrap();
        let y = m.forward(&x, Mode::Train, &mut rng).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let m = Model::<f64>::build(&ArchitectureConfig::tiny(), 0).unwrap();
        let x = Tensor::zeros(&[3, 17]);
        assert!(m.forward(&x, Mode::Infer, &mut RngState::new(0)).is_err());
    }

    #[test]
    fn without_dropout_train_equals_infer() {
        let mut cfg = ArchitectureConfig::small();
        cfg.dropout_rate = 0.0;
        let m = Model::<f64>::build(&cfg, 5).unwrap();
        let mut rng = RngState::new(6);
        let x = Tensor::from_vec(&[3, 96], (0..288).map(|_| rng.normal()).collect()).unwrap();
        let a = m.forward(&x, Mode::Train, &mut RngState::new(1)).unwrap();
        let b = m.forward(&x, Mode::Infer, &mut RngState::new(2)).unwrap();
        assert_eq!(a, b);
    }
}

//! End-to-end finite-difference verification of the autoencoder's analytic
//! gradients.

use serde::Serialize;

use crate::engine::{mse_loss, Mode, RngState, Tensor};
use crate::model::{BackwardFault, Model};
use crate::Result;

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub mean_relative_error: f64,
    pub coordinates_checked: usize,
    /// Coordinates skipped because the perturbation flipped a ReLU.
    pub kinks_skipped: usize,
    pub worst_parameter: String,
    pub epsilon: f64,
    /// Layers whose analytic weight gradient is identically zero.
    pub silent_layers: Vec<String>,
}

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is numerically zero are judged on absolute error.
pub const RELATIVE_FLOOR: f64 = 1e-8;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

fn loss_and_pattern(model: &Model<f64>, x: &Tensor<f64>) -> Result<(f64, Vec<bool>)> {
    let trace = model.forward_traced(x, Mode::Infer, &mut RngState::new(0))?;
    Ok((mse_loss(&trace.output, x)?, trace.relu_pattern()))
}

/// Compares analytic loss gradients against central differences on a random
/// sample of at least `samples` parameter coordinates (all of them if the
/// model is smaller). Dropout is disabled throughout.
pub fn grad_check(
    model: &Model<f64>,
    input: &Tensor<f64>,
    eps: f64,
    samples: usize,
    seed: u64,
    fault: Option<BackwardFault>,
) -> Result<GradCheckReport> {
    let mut rng = RngState::new(seed);
    let (_, grads) = model.loss_and_grads_with_fault(input, Mode::Infer, &mut rng, fault)?;
    let (_, base_pattern) = loss_and_pattern(model, input)?;
    let silent_layers = silent_layers(model, &grads);

    // (layer, bias?, index)
    let mut coords: Vec<(usize, bool, usize)> = model
        .layers
        .iter()
        .enumerate()
        .flat_map(|(l, layer)| {
            (0..layer.params.weight.len())
                .map(move |i| (l, false, i))
                .chain((0..layer.params.bias.len()).map(move |i| (l, true, i)))
        })
        .collect();
    rng.shuffle(&mut coords);

    let mut probe = model.clone();
    let mut max_err = 0.0f64;
    let mut sum_err = 0.0;
    let mut checked = 0;
    let mut kinks = 0;
    let mut worst = String::new();
    for &(l, is_bias, i) in &coords {
        if checked >= samples {
            break;
        }
        let original = {
            let p = &model.layers[l].params;
            if is_bias {
                p.bias.data()[i]
            } else {
                p.weight.data()[i]
            }
        };
        let mut eval = |value: f64| -> Result<(f64, Vec<bool>)> {
            let p = &mut probe.layers[l].params;
            let slot = if is_bias {
                &mut p.bias.data_mut()[i]
            } else {
                &mut p.weight.data_mut()[i]
            };
            *slot = value;
            let out = loss_and_pattern(&probe, input);
            let p = &mut probe.layers[l].params;
            let slot = if is_bias {
                &mut p.bias.data_mut()[i]
            } else {
                &mut p.weight.data_mut()[i]
            };
            *slot = original;
            out
        };
        let (plus, plus_pattern) = eval(original + eps)?;
        let (minus, minus_pattern) = eval(original - eps)?;
        if plus_pattern != base_pattern || minus_pattern != base_pattern {
            kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let g = &grads[l];
        let analytic = if is_bias { g.bias.data()[i] } else { g.weight.data()[i] };
        let err = relative_error(analytic, numeric);
        sum_err += err;
        checked += 1;
        if err > max_err || worst.is_empty() {
            max_err = max_err.max(err);
            worst = format!(
                "{}.{}[{i}]",
                model.layers[l].name,
                if is_bias { "bias" } else { "weight" }
            );
        }
    }
    Ok(GradCheckReport {
        max_relative_error: max_err,
        mean_relative_error: if checked > 0 { sum_err / checked as f64 } else { 0.0 },
        coordinates_checked: checked,
        kinks_skipped: kinks,
        worst_parameter: worst,
        epsilon: eps,
        silent_layers,
    })
}

fn silent_layers(model: &Model<f64>, grads: &[crate::engine::LayerGrads<f64>]) -> Vec<String> {
    model
        .layers
        .iter()
        .zip(grads)
        .filter(|(_, g)| g.weight.data().iter().all(|&v| v == 0.0))
        .map(|(l, _)| l.name.clone())
        .collect()
}

/// Builds a model from the first seed at or after `seed` whose every layer
/// receives a nonzero gradient on `input`. Small ReLU networks are often
/// born with a dead path, which would make a gradient check vacuous.
pub fn build_live_model(
    config: &crate::model::ArchitectureConfig,
    seed: u64,
    input: &Tensor<f64>,
    max_tries: u64,
) -> Result<(Model<f64>, u64)> {
    for s in seed..seed + max_tries {
        let model = Model::<f64>::build(config, s)?;
        let (_, grads) = model.loss_and_grads(input, Mode::Infer, &mut RngState::new(0))?;
        if silent_layers(&model, &grads).is_empty() {
            return Ok((model, s));
        }
    }
    Err(crate::Error::InvalidArgument(format!(
        "no seed in {seed}..{} gives a network with gradient signal in every layer",
        seed + max_tries
    )))
}

/// Gradient check of the tiny configuration on a seeded random input. With
/// `mutate`, the backward pass of the output layer has its sign flipped,
/// which the check must catch.
pub fn check_tiny(seed: u64, eps: f64, samples: usize, mutate: bool) -> Result<(GradCheckReport, u64)> {
    let cfg = crate::model::ArchitectureConfig::tiny();
    let mut rng = RngState::derive(seed, 5);
    let n = cfg.channels * cfg.seq_len;
    let x = Tensor::from_vec(&[cfg.channels, cfg.seq_len], (0..n).map(|_| rng.normal()).collect())?;
    let (model, model_seed) = build_live_model(&cfg, seed, &x, 1000)?;
    let fault = mutate.then(|| BackwardFault::FlipInputGradient {
        index: model.layers.len() - 1,
    });
    Ok((grad_check(&model, &x, eps, samples, seed, fault)?, model_seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::LayerParams;
    use crate::model::{ArchitectureConfig, Layer, LayerKind};

    fn input(cfg: &ArchitectureConfig, seed: u64) -> Tensor<f64> {
        let mut rng = RngState::new(seed);
        let n = cfg.channels * cfg.seq_len;
        Tensor::from_vec(&[cfg.channels, cfg.seq_len], (0..n).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn tiny_network_gradients_are_exact() {
        let cfg = ArchitectureConfig::tiny();
        let x = input(&cfg, 1);
        let (model, _) = build_live_model(&cfg, 21, &x, 100).unwrap();
        let r = grad_check(&model, &x, 1e-5, 200, 3, None).unwrap();
        assert!(r.silent_layers.is_empty());
        assert!(r.coordinates_checked >= 200);
        assert!(r.max_relative_error < 1e-4, "{r:?}");
    }

    #[test]
    fn affine_network_is_exact_to_rounding() {
        let cfg = ArchitectureConfig::tiny();
        let n = cfg.channels * cfg.seq_len;
        let mut rng = RngState::new(8);
        // well-conditioned instance: inputs and residuals bounded away from zero
        let weight = Tensor::from_vec(&[n, n], (0..n * n).map(|_| rng.uniform_range(-0.01, 0.01)).collect()).unwrap();
        let bias = Tensor::from_vec(&[n], (0..n).map(|_| rng.uniform_range(3.0, 4.0)).collect()).unwrap();
        let model = Model {
            config: cfg.clone(),
            layers: vec![Layer {
                name: "dense".into(),
                kind: LayerKind::Dense,
                params: LayerParams::new(weight, bias),
                relu: false,
                dropout: false,
            }],
        };
        let x = Tensor::from_vec(
            &[cfg.channels, cfg.seq_len],
            (0..n).map(|_| rng.uniform_range(0.5, 1.5)).collect(),
        )
        .unwrap();
        let r = grad_check(&model, &x, 1e-5, 200, 4, None).unwrap();
        assert!(r.max_relative_error < 1e-8, "{r:?}");
    }

    #[test]
    fn sign_flip_is_caught() {
        let cfg = ArchitectureConfig::tiny();
        let x = input(&cfg, 1);
        let (model, _) = build_live_model(&cfg, 21, &x, 100).unwrap();
        let fault = BackwardFault::FlipInputGradient {
            index: model.layers.len() - 1,
        };
        let r = grad_check(&model, &x, 1e-5, 200, 3, Some(fault)).unwrap();
        assert!(r.max_relative_error > 0.1, "{r:?}");
    }

    #[test]
    fn tiny_entry_point() {
        for seed in 0..3 {
            let (ok, _) = check_tiny(seed, 1e-5, 200, false).unwrap();
            assert!(ok.max_relative_error < 1e-4, "{ok:?}");
            let (bad, _) = check_tiny(seed, 1e-5, 200, true).unwrap();
            assert!(bad.max_relative_error > 0.1, "{bad:?}");
        }
    }

    #[test]
    fn dead_networks_are_reported() {
        let cfg = ArchitectureConfig::tiny();
        let x = input(&cfg, 1);
        let model = Model::<f64>::build(&cfg, 0).unwrap();
        let r = grad_check(&model, &x, 1e-5, 10, 3, None).unwrap();
        assert!(!r.silent_layers.is_empty());
    }
}

//! Mini-batch Adam training with validation-loss early stopping.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::DailySegment;
use crate::engine::{AdamConfig, LayerGrads, Mode, Real, RngState, Tensor};
use crate::model::Model;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 100,
            batch_size: 4,
            learning_rate: 1e-3,
            patience: 10,
            min_delta: 0.0,
            seed: 0,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config("batch_size and patience must be at least 1".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 || self.min_delta.is_nan() || self.min_delta < 0.0 {
            return Err(Error::Config(
                "learning rate must be positive and min_delta non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// 1-based epoch whose weights were restored; 0 when no epoch ran.
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub early_stopped: bool,
    pub wall_time_secs: f64,
    pub seed: u64,
    pub parameter_count: usize,
}

/// Patience counter on a monitored loss.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best: f64,
    best_epoch: usize,
    wait: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        EarlyStopping {
            patience,
            min_delta,
            best: f64::INFINITY,
            best_epoch: 0,
            wait: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best - self.min_delta {
            self.best = loss;
            self.best_epoch = epoch;
            self.wait = 0;
            return StopDecision::Improved;
        }
        self.wait += 1;
        if self.wait >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

/// Hook called before each optimizer update.
pub trait TrainObserver<S> {
    fn before_update(&mut self, _epoch: usize, _batch: &[usize], _model: &Model<S>) {}
}

struct NoObserver;
impl<S> TrainObserver<S> for NoObserver {}

/// Mean over segments of each segment's reconstruction MSE, dropout off.
pub fn evaluate_loss<S: Real>(model: &Model<S>, segments: &[DailySegment]) -> Result<f64> {
    if segments.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate loss on an empty set".into()));
    }
    let total = segments
        .iter()
        .map(|s| model.loss(&s.to_tensor::<S>()).map(Real::as_f64))
        .sum::<Result<f64>>()?;
    Ok(total / segments.len() as f64)
}

/// Trains on `train` and early-stops on the validation loss of `val`.
/// Segments must already be normalized.
pub fn train<S: Real>(
    model: Model<S>,
    train: &[DailySegment],
    val: &[DailySegment],
    cfg: &TrainConfig,
) -> Result<(Model<S>, TrainReport)> {
    if val.is_empty() {
        return Err(Error::InvalidArgument("validation set is empty".into()));
    }
    train_with(model, train, cfg, |m: &Model<S>| evaluate_loss(m, val), &mut NoObserver)
}

/// Training loop with an injectable validation function and observer.
pub fn train_with<S: Real, V, O>(
    mut model: Model<S>,
    train: &[DailySegment],
    cfg: &TrainConfig,
    mut validate: V,
    observer: &mut O,
) -> Result<(Model<S>, TrainReport)>
where
    V: FnMut(&Model<S>) -> Result<f64>,
    O: TrainObserver<S> + ?Sized,
{
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let started = Instant::now();
    let inputs: Vec<Tensor<S>> = train.iter().map(DailySegment::to_tensor).collect();
    let adam = AdamConfig {
        learning_rate: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let mut shuffle_rng = RngState::derive(cfg.seed, 1);
    let mut dropout_rng = RngState::derive(cfg.seed, 2);
    let mut stopper = EarlyStopping::new(cfg.patience, cfg.min_delta);
    let mut best_model: Option<Model<S>> = None;
    let mut report = TrainReport {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        stopped_epoch: 0,
        early_stopped: false,
        wall_time_secs: 0.0,
        seed: cfg.seed,
        parameter_count: model.count_parameters(),
    };

    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        shuffle_rng.shuffle(&mut order);
        let mut epoch_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            observer.before_update(epoch, batch, &model);
            let scale = S::from_f64(1.0 / batch.len() as f64);
            let mut acc: Vec<LayerGrads<S>> = model.layers.iter().map(|l| LayerGrads::zeros_like(&l.params)).collect();
            for &i in batch {
                let (loss, grads) = model.loss_and_grads(&inputs[i], Mode::Train, &mut dropout_rng)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "training loss at epoch {epoch}, batch {}",
                        b + 1
                    )));
                }
                epoch_sum += loss.as_f64();
                for (a, g) in acc.iter_mut().zip(&grads) {
                    a.accumulate(g, scale);
                }
            }
            model.apply_gradients(&acc, &adam).map_err(|e| match e {
                Error::NonFinite(_) => Error::NonFinite(format!("gradient at epoch {epoch}, batch {}", b + 1)),
                other => other,
            })?;
        }
        report.train_loss.push(epoch_sum / inputs.len() as f64);
        let val_loss = validate(&model)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss at epoch {epoch}")));
        }
        report.val_loss.push(val_loss);
        report.stopped_epoch = epoch;
        match stopper.observe(epoch, val_loss) {
            StopDecision::Improved => best_model = Some(model.clone()),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                report.early_stopped = true;
                break;
            }
        }
    }
    report.best_epoch = stopper.best_epoch();
    if let Some(best) = best_model {
        model = best;
    }
    report.wall_time_secs = started.elapsed().as_secs_f64();
    Ok((model, report))
}

//! Mini-batch SGD with momentum, weight decay, per-layer learning-rate
//! multipliers and a step-decay schedule, plus best-model selection.

use std::fmt::Write as _;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::nn::{Gradients, Mode, Network, Params};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    /// Effective rate for layers initialized from a pre-trained source.
    pub base_lr_transferred: f64,
    /// Base rate; a layer's effective rate is this times its multiplier.
    pub base_lr_new: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            base_lr_transferred: 0.001,
            base_lr_new: 0.01,
            momentum: 0.9,
            weight_decay: 0.0005,
            batch_size: 256,
            epochs: 30,
            lr_decay_factor: 10.0,
            lr_decay_every: 10,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let rates_ok = [self.base_lr_transferred, self.base_lr_new]
            .iter()
            .all(|r| r.is_finite() && *r >= 0.0);
        if !rates_ok {
            return Err(Error::Config(
                "learning rates must be finite and non-negative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum)
            || !(0.0..=f64::INFINITY).contains(&self.weight_decay)
        {
            return Err(Error::Config(
                "momentum must be in [0, 1) and weight decay >= 0".into(),
            ));
        }
        if self.batch_size == 0
            || self.lr_decay_every == 0
            || self.lr_decay_factor.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)
        {
            return Err(Error::Config(
                "batch size, decay interval and decay factor must be positive".into(),
            ));
        }
        Ok(())
    }

    /// `base_lr_new * multiplier / decay_factor^floor(epoch / decay_every)`.
    pub fn learning_rate(&self, multiplier: f64, epoch: usize) -> f64 {
        let steps = (epoch / self.lr_decay_every) as i32;
        self.base_lr_new * multiplier / self.lr_decay_factor.powi(steps)
    }

    /// Multiplier that makes a layer train at `base_lr_transferred`.
    pub fn transferred_multiplier(&self) -> f64 {
        if self.base_lr_new == 0.0 {
            0.0
        } else {
            self.base_lr_transferred / self.base_lr_new
        }
    }
}

#[derive(Debug, Clone)]
pub struct BestModel<T> {
    pub epoch: usize,
    pub validation_loss: f64,
    pub network: Network<T>,
}

#[derive(Debug, Clone)]
pub struct OptimState<T> {
    pub velocities: Vec<Option<Params<T>>>,
    /// Number of completed epochs.
    pub epoch: usize,
    pub best: Option<BestModel<T>>,
}

impl<T: Real> OptimState<T> {
    pub fn new(net: &Network<T>) -> Self {
        let velocities = net
            .layers()
            .iter()
            .map(|l| {
                l.params.as_ref().map(|p| Params {
                    weights: Tensor::zeros(p.weights.dims()).expect("param dims are valid"),
                    biases: Tensor::zeros(p.biases.dims()).expect("param dims are valid"),
                })
            })
            .collect();
        OptimState {
            velocities,
            epoch: 0,
            best: None,
        }
    }

    pub fn best_validation_loss(&self) -> Option<f64> {
        self.best.as_ref().map(|b| b.validation_loss)
    }

    /// Keep a snapshot when `loss` is strictly below the best so far (ties keep the earlier epoch).
    pub fn observe_validation(&mut self, epoch: usize, loss: f64, net: &Network<T>) -> bool {
        let improved = self.best.as_ref().is_none_or(|b| loss < b.validation_loss);
        if improved {
            self.best = Some(BestModel {
                epoch,
                validation_loss: loss,
                network: net.clone(),
            });
        }
        improved
    }
}

/// One SGD update:
/// `v <- momentum * v - lr * (grad + weight_decay * param)`, `param <- param + v`.
/// Biases are not decayed. Layers with zero effective rate are skipped entirely.
pub fn sgd_step<T: Real>(
    net: &mut Network<T>,
    grads: &Gradients<T>,
    state: &mut OptimState<T>,
    cfg: &OptimConfig,
    epoch: usize,
) -> Result<()> {
    let n_layers = net.layers().len();
    if grads.params.len() != n_layers || state.velocities.len() != n_layers {
        return Err(Error::shape(
            "gradient/velocity lists do not match the network",
        ));
    }
    let momentum = T::from_f64_lossy(cfg.momentum);
    let decay = T::from_f64_lossy(cfg.weight_decay);
    for (idx, layer) in net.layers_mut().iter_mut().enumerate() {
        let (Some(params), Some(grad), Some(vel)) = (
            layer.params.as_mut(),
            grads.params[idx].as_ref(),
            state.velocities[idx].as_mut(),
        ) else {
            continue;
        };
        let lr = cfg.learning_rate(layer.spec.lr_multiplier, epoch);
        if lr == 0.0 {
            continue;
        }
        let lr = T::from_f64_lossy(lr);
        update(
            &mut params.weights,
            &grad.weights,
            &mut vel.weights,
            lr,
            momentum,
            decay,
        )
        .map_err(|e| Error::layer(&layer.spec.name, e.to_string()))?;
        update(
            &mut params.biases,
            &grad.biases,
            &mut vel.biases,
            lr,
            momentum,
            T::zero(),
        )
        .map_err(|e| Error::layer(&layer.spec.name, e.to_string()))?;
    }
    Ok(())
}

fn update<T: Real>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    vel: &mut Tensor<T>,
    lr: T,
    momentum: T,
    decay: T,
) -> Result<()> {
    param.check_same_shape(grad, "sgd gradient")?;
    param.check_same_shape(vel, "sgd velocity")?;
    for ((p, &g), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(vel.data_mut())
    {
        *v = momentum * *v - lr * (g + decay * *p);
        *p += *v;
    }
    Ok(())
}

/// Consume one pass of mini-batches, updating the network after each.
/// Returns the sample-weighted mean training loss and advances `state.epoch`.
pub fn train_epoch<T: Real, I>(
    net: &mut Network<T>,
    batches: I,
    state: &mut OptimState<T>,
    cfg: &OptimConfig,
    rng: &mut dyn RngCore,
) -> Result<f64>
where
    I: IntoIterator<Item = Result<Batch<T>>>,
{
    let epoch = state.epoch;
    let mut total = 0.0;
    let mut count = 0usize;
    for batch in batches {
        let batch = batch?;
        let (out, grads) =
            net.loss_and_gradients(&batch.inputs, &batch.labels, Mode::Train, rng)?;
        let loss = out.loss.to_f64_lossy();
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
        }
        sgd_step(net, &grads, state, cfg, epoch)?;
        total += loss * batch.labels.len() as f64;
        count += batch.labels.len();
    }
    if count == 0 {
        return Err(Error::invalid("training epoch received no samples"));
    }
    state.epoch += 1;
    Ok(total / count as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord<S> {
    pub epoch: usize,
    pub validation_loss: f64,
    pub snapshot: S,
}

/// Record with the lowest validation loss; the earliest wins ties.
pub fn select_best_model<S>(history: &[EpochRecord<S>]) -> Result<&EpochRecord<S>> {
    let mut best: Option<&EpochRecord<S>> = None;
    for rec in history {
        if best.is_none_or(|b| rec.validation_loss < b.validation_loss) {
            best = Some(rec);
        }
    }
    best.ok_or_else(|| Error::invalid("no validated epochs to select from"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

pub const CURVE_HEADER: &str = "epoch,train_loss,val_loss,val_accuracy";

pub fn curve_to_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for p in points {
        // Shortest round-trip formatting, so a resumed run reads back the exact values.
        let _ = writeln!(
            out,
            "{},{},{},{}",
            p.epoch, p.train_loss, p.val_loss, p.val_accuracy
        );
    }
    out
}

pub fn curve_from_csv(text: &str) -> Result<Vec<CurvePoint>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CURVE_HEADER) {
        return Err(Error::invalid("training curve is missing its header"));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::invalid(format!("malformed training curve row {}", i + 2));
            if f.len() != 4 {
                return Err(bad());
            }
            Ok(CurvePoint {
                epoch: f[0].parse().map_err(|_| bad())?,
                train_loss: f[1].parse().map_err(|_| bad())?,
                val_loss: f[2].parse().map_err(|_| bad())?,
                val_accuracy: f[3].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

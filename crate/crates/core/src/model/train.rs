//! Minibatch Adam training on the log-cosh residual loss.

use std::fmt;
use std::str::FromStr;

use super::loss::{loss, LossInputs};
use super::SarCnnModel;
use crate::dataset::{minibatches, PatchPair};
use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamState};
use crate::tensor::{Real, Tensor4};

/// A run of `epochs` epochs at learning rate `lr`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phase {
    pub epochs: usize,
    pub lr: f64,
}

/// Learning-rate schedule, written as `epochs:lr[,epochs:lr...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule(pub Vec<Phase>);

impl Schedule {
    pub fn total_epochs(&self) -> usize {
        self.0.iter().map(|p| p.epochs).sum()
    }

    /// Learning rate for each epoch in order.
    pub fn rates(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().flat_map(|p| std::iter::repeat_n(p.lr, p.epochs))
    }
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule(vec![Phase { epochs: 30, lr: 1e-3 }, Phase { epochs: 20, lr: 1e-4 }])
    }
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let phases = s
            .split(',')
            .map(|part| {
                let (e, lr) = part
                    .trim()
                    .split_once(':')
                    .ok_or_else(|| Error::usage(format!("schedule entry {part:?} is not epochs:lr")))?;
                let epochs = e.trim().parse().map_err(|_| Error::usage(format!("bad epoch count {e:?}")))?;
                let lr: f64 = lr.trim().parse().map_err(|_| Error::usage(format!("bad learning rate {lr:?}")))?;
                if !(lr >= 0.0 && lr.is_finite()) {
                    return Err(Error::usage(format!("learning rate {lr} must be finite and >= 0")));
                }
                Ok(Phase { epochs, lr })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Schedule(phases))
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|p| format!("{}:{}", p.epochs, p.lr)).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub schedule: Schedule,
    pub batch_size: usize,
    pub seed: u64,
    /// Mean of the log-speckle of the noisy patches.
    pub c: f64,
}

impl TrainConfig {
    pub fn new(c: f64) -> Self {
        TrainConfig { schedule: Schedule::default(), batch_size: 128, seed: 0, c }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Mean per-patch loss of every epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

fn log_inputs<T: Real>(clean: &Tensor4<f32>, noisy: &Tensor4<f32>) -> Result<(Tensor4<T>, Tensor4<T>)> {
    let log_noisy: Vec<T> = noisy.data().iter().map(|&v| T::lit(f64::from(v).ln())).collect();
    let log_ratio: Vec<T> = noisy
        .data()
        .iter()
        .zip(clean.data())
        .map(|(&y, &x)| T::lit(f64::from(y).ln() - f64::from(x).ln()))
        .collect();
    Ok((Tensor4::from_vec(noisy.dims(), log_noisy)?, Tensor4::from_vec(noisy.dims(), log_ratio)?))
}

/// Trains `model` in place.
///
/// The loss is summed over pixels and patches; the gradient handed to the
/// optimizer is divided by the batch size so learning rates do not depend on
/// it. `on_epoch` receives the 1-based epoch and its mean per-patch loss.
pub fn train<T: Real>(
    model: &mut SarCnnModel<T>,
    pairs: &[PatchPair],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    if pairs.is_empty() {
        return Err(Error::usage("training needs at least one patch pair"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::usage("batch size must be >= 1"));
    }
    let mut states: Vec<AdamState<T>> = model.params().iter().map(|p| AdamState::new(p.len())).collect();
    let c = T::lit(cfg.c);
    let mut report = TrainReport::default();
    let was_training = model.is_training();
    model.set_training(true);

    let result = (|| {
        for (epoch, lr) in cfg.schedule.rates().enumerate() {
            let lr = T::lit(lr);
            let mut total = 0.0;
            for (batch, (clean, noisy)) in minibatches(pairs, cfg.batch_size, cfg.seed, epoch as u64).enumerate() {
                let diverged = |detail: String| Error::Diverged { epoch: epoch + 1, batch, detail };
                let (log_noisy, log_ratio) = log_inputs::<T>(&clean, &noisy)?;
                let (residual, trace) = model.forward_train(&log_noisy).map_err(|e| diverged(e.to_string()))?;
                let (value, grad) = loss(&LossInputs { residual_pred: &residual, log_ratio: &log_ratio, c })
                    .map_err(|e| diverged(e.to_string()))?;
                if !value.is_finite() {
                    return Err(diverged(format!("loss is {value}")));
                }
                total += value;
                let scale = T::one() / T::from_usize(clean.dims().n).unwrap();
                let grads = model.backward(&trace, &grad.map(|g| g * scale)).map_err(|e| diverged(e.to_string()))?;
                let flat = grads.flat();
                if let Some(k) = flat.iter().position(|g| g.iter().any(|v| !v.is_finite())) {
                    return Err(diverged(format!("gradient of parameter block {k} is not finite")));
                }
                for ((p, g), s) in model.params_mut().into_iter().zip(flat).zip(&mut states) {
                    adam_step(p, g, s, lr).map_err(|e| diverged(e.to_string()))?;
                }
                report.steps += 1;
            }
            let mean = total / pairs.len() as f64;
            log::info!("epoch {} mean loss {mean:.6}", epoch + 1);
            report.epoch_losses.push(mean);
            on_epoch(epoch + 1, mean);
        }
        Ok(())
    })();
    model.set_training(was_training);
    result.map(|_| report)
}

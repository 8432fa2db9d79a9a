//! Adam / AMSGrad training of an [`AeModel`] on Huber reconstruction loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::WindowSet;
use crate::error::{Error, Result};
use crate::model::{AeModel, ParamGrads};
use crate::tensor::{huber_loss, Tensor};

/// Samples per gradient chunk. Chunks are summed in index order so the
/// result does not depend on the number of worker threads.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub amsgrad: bool,
    pub seed: u64,
    pub huber_beta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 150,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            amsgrad: false,
            seed: 125,
            huber_beta: 1.0,
        }
    }
}

impl TrainConfig {
    /// Settings used for the SKAB architecture.
    pub fn skab() -> Self {
        Self::default()
    }

    /// Settings used for the industrial architecture (AMSGrad).
    pub fn industrial() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            amsgrad: true,
            seed: 42,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("train: {msg}")));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.epsilon > 0.0 && self.huber_beta > 0.0) {
            return bad("learning_rate, epsilon and huber_beta must be positive");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("beta1 and beta2 must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Adam optimiser state over every parameter tensor of a model.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    amsgrad: bool,
    step: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    second_max: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig) -> Self {
        Adam {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.epsilon,
            amsgrad: cfg.amsgrad,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
            second_max: Vec::new(),
        }
    }

    /// Apply one bias-corrected update. `params` and `grads` are visited in
    /// the same order on every call.
    pub fn step<'a>(&mut self, params: impl Iterator<Item = (&'a mut [f64], &'a [f64])>) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (slot, (theta, grad)) in params.enumerate() {
            if self.first.len() <= slot {
                self.first.push(vec![0.0; theta.len()]);
                self.second.push(vec![0.0; theta.len()]);
                self.second_max.push(vec![0.0; theta.len()]);
            }
            let (m, v, vmax) = (
                &mut self.first[slot],
                &mut self.second[slot],
                &mut self.second_max[slot],
            );
            for i in 0..theta.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let v_used = if self.amsgrad {
                    vmax[i] = vmax[i].max(v[i]);
                    vmax[i]
                } else {
                    v[i]
                };
                let m_hat = m[i] / bc1;
                let v_hat = v_used / bc2;
                theta[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean per-window Huber loss seen during the epoch (pre-update).
    pub train_loss: f64,
    /// Mean Huber loss on the validation windows after the epoch.
    pub valid_loss: Option<f64>,
}

/// Train `model` in place and return the per-epoch loss history.
pub fn train(
    model: &mut AeModel,
    train_set: &WindowSet,
    valid_set: &WindowSet,
    cfg: &TrainConfig,
) -> Result<Vec<EpochLoss>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training window set".into()));
    }
    for set in [train_set, valid_set] {
        if set.labels.iter().any(|l| *l == Some(true)) {
            return Err(Error::Config(
                "training and validation windows must all be normal".into(),
            ));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(cfg);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        for (batch_index, batch) in order.chunks(cfg.batch_size).enumerate() {
            let fail = |e: Error| Error::Training {
                epoch,
                batch: batch_index,
                message: e.to_string(),
            };
            let (loss_sum, grads) = batch_gradients(model, &train_set.windows, batch, cfg.huber_beta)
                .map_err(fail)?;
            if !loss_sum.is_finite() {
                return Err(fail(Error::NonFinite("batch loss".into())));
            }
            epoch_total += loss_sum;
            let scale = 1.0 / batch.len() as f64;
            let mean_grads: Vec<Vec<f64>> = grads
                .iter()
                .flatten()
                .flat_map(|(w, b)| [w, b])
                .map(|g| g.data().iter().map(|v| v * scale).collect())
                .collect();
            let params = model
                .layers_mut()
                .iter_mut()
                .filter_map(|l| l.params.as_mut())
                .flat_map(|(w, b)| [w.data_mut(), b.data_mut()]);
            adam.step(params.zip(mean_grads.iter().map(Vec::as_slice)));
            if model
                .layers()
                .iter()
                .filter_map(|l| l.params.as_ref())
                .any(|(w, b)| w.ensure_finite("w").is_err() || b.ensure_finite("b").is_err())
            {
                return Err(fail(Error::NonFinite("parameters after update".into())));
            }
        }
        let valid_loss = if valid_set.is_empty() {
            None
        } else {
            Some(mean_huber(model, &valid_set.windows, cfg.huber_beta).map_err(|e| {
                Error::Training {
                    epoch,
                    batch: 0,
                    message: format!("validation: {e}"),
                }
            })?)
        };
        let entry = EpochLoss {
            epoch: epoch + 1,
            train_loss: epoch_total / train_set.len() as f64,
            valid_loss,
        };
        log::info!(
            "epoch {:>4}: train {:.6e} valid {}",
            entry.epoch,
            entry.train_loss,
            entry
                .valid_loss
                .map_or_else(|| "-".to_string(), |v| format!("{v:.6e}"))
        );
        history.push(entry);
    }
    Ok(history)
}

/// Summed loss and summed parameter gradients over the batch.
fn batch_gradients(
    model: &AeModel,
    windows: &[Tensor],
    batch: &[usize],
    beta: f64,
) -> Result<(f64, ParamGrads)> {
    let partials: Vec<(f64, ParamGrads)> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut acc: Option<(f64, ParamGrads)> = None;
            for &i in chunk {
                let (loss, grads) = model.huber_with_grads(&windows[i], beta)?;
                acc = Some(match acc {
                    None => (loss, grads),
                    Some((l, g)) => (l + loss, add_grads(g, &grads)),
                });
            }
            Ok(acc.expect("chunks are non-empty"))
        })
        .collect::<Result<_>>()?;
    let mut iter = partials.into_iter();
    let first = iter.next().expect("batch is non-empty");
    Ok(iter.fold(first, |(l, g), (l2, g2)| (l + l2, add_grads(g, &g2))))
}

fn add_grads(mut acc: ParamGrads, other: &ParamGrads) -> ParamGrads {
    for (a, b) in acc.iter_mut().zip(other) {
        if let (Some((aw, ab)), Some((bw, bb))) = (a.as_mut(), b.as_ref()) {
            for (x, y) in aw.data_mut().iter_mut().zip(bw.data()) {
                *x += y;
            }
            for (x, y) in ab.data_mut().iter_mut().zip(bb.data()) {
                *x += y;
            }
        }
    }
    acc
}

/// Mean Huber reconstruction loss over a set of windows.
pub fn mean_huber(model: &AeModel, windows: &[Tensor], beta: f64) -> Result<f64> {
    let losses: Vec<f64> = windows
        .par_iter()
        .map(|x| huber_loss(x, &model.reconstruct(x)?, beta))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::model::Model;
use crate::optim::{cosine_lr, Optimizer, OptimizerKind};
use crate::scalar::Scalar;
use crate::tape::{LossKind, Tape};
use crate::tensor::Tensor;

/// Added to the prediction's standard deviation inside the training NPCC.
pub const TRAIN_NPCC_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossName {
    Npcc,
    Comloss,
    Mse,
}

impl LossName {
    pub fn kind(self) -> LossKind {
        match self {
            LossName::Npcc => LossKind::Npcc { eps: TRAIN_NPCC_EPS },
            LossName::Comloss => LossKind::Com { eps: TRAIN_NPCC_EPS },
            LossName::Mse => LossKind::Mse,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_min: f64,
    pub loss: LossName,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 16,
            lr0: 0.05,
            lr_min: 0.0,
            loss: LossName::Npcc,
            seed: 0,
            optimizer: OptimizerKind::Sgd,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(NnError::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.lr0 >= 0.0 && self.lr_min >= 0.0 && self.lr0.is_finite()) {
            return Err(NnError::Config("learning rates must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Mini-batch training over the sample ids in `train_ids`.
///
/// `load` receives the ids of one batch and returns `(inputs, targets)` as
/// `[batch, ...]` tensors; `on_epoch` sees each epoch's mean loss. Sample
/// order is reshuffled every epoch from `cfg.seed`. Returns the per-epoch
/// mean losses; a non-finite loss aborts with the epoch recorded.
pub fn fit<T, F, E>(
    model: &mut Model<T>,
    cfg: &TrainingConfig,
    train_ids: &[usize],
    mut load: F,
    mut on_epoch: E,
) -> Result<Vec<f64>>
where
    T: Scalar,
    F: FnMut(&[usize]) -> Result<(Tensor<T>, Tensor<T>)>,
    E: FnMut(usize, f64),
{
    cfg.validate()?;
    if train_ids.is_empty() {
        return Err(NnError::Config("no training samples".into()));
    }
    let mut opt = Optimizer::new(cfg.optimizer);
    let kind = cfg.loss.kind();
    let mut order = train_ids.to_vec();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.lr0, cfg.lr_min)?;
        order.copy_from_slice(train_ids);
        order.shuffle(&mut speckle_core::rng::stream(cfg.seed, epoch as u64));
        let mut total = 0.0;
        let mut batches = 0usize;
        for ids in order.chunks(cfg.batch_size) {
            let (x, y) = load(ids)?;
            let mut tape = Tape::new();
            let xv = tape.constant(x);
            let (out, params) = model.forward_on(&mut tape, xv, true)?;
            let loss = match tape.loss(out, &y, kind) {
                Err(NnError::Degenerate) => return Err(NnError::NonFinite { epoch }),
                other => other?,
            };
            let value = tape.value(loss).data()[0].as_f64();
            if !value.is_finite() {
                return Err(NnError::NonFinite { epoch });
            }
            tape.backward(loss)?;
            model.zero_grads();
            model.accumulate_grads(&tape, &params)?;
            opt.step(model, lr)?;
            total += value;
            batches += 1;
        }
        let mean = total / batches as f64;
        if !mean.is_finite() || model.params().iter().any(|p| !p.is_finite()) {
            return Err(NnError::NonFinite { epoch });
        }
        on_epoch(epoch, mean);
        history.push(mean);
    }
    Ok(history)
}

/// Inference over a large `[n, ...]` batch in chunks of `chunk` samples.
pub fn predict<T: Scalar>(model: &Model<T>, input: &Tensor<T>, chunk: usize) -> Result<Tensor<T>> {
    let n = input.shape()[0];
    let per = input.numel() / n.max(1);
    let mut out = Vec::new();
    let mut out_shape = Vec::new();
    for start in (0..n).step_by(chunk.max(1)) {
        let end = (start + chunk.max(1)).min(n);
        let mut shape = input.shape().to_vec();
        shape[0] = end - start;
        let part = Tensor::new(shape, input.data()[start * per..end * per].to_vec())?;
        let y = model.forward(&part)?;
        out_shape = y.shape().to_vec();
        out.extend_from_slice(y.data());
    }
    out_shape[0] = n;
    Tensor::new(out_shape, out)
}

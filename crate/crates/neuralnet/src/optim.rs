use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::model::Model;
use crate::scalar::Scalar;

/// Cosine-annealed learning rate for `epoch` of `total`.
pub fn cosine_lr(epoch: usize, total: usize, lr0: f64, lr_min: f64) -> Result<f64> {
    if total == 0 || epoch > total {
        return Err(NnError::Config(format!("cosine_lr needs 0 <= epoch <= total, total >= 1 (got {epoch}/{total})")));
    }
    let phase = std::f64::consts::PI * epoch as f64 / total as f64;
    Ok(lr_min + 0.5 * (lr0 - lr_min) * (1.0 + phase.cos()))
}

impl<T: Scalar> Model<T> {
    /// `w <- w - lr * grad(w)` for every parameter, then clears gradients.
    pub fn sgd_step(&mut self, lr: f64) -> Result<()> {
        let grads = self.take_grads()?;
        let lr = T::from_f64_lossy(lr);
        for (p, g) in self.params_mut().iter_mut().zip(grads) {
            p.data_mut().iter_mut().zip(g).for_each(|(w, g)| *w -= lr * g);
        }
        Ok(())
    }
}

/// Update rule applied after each mini-batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Momentum { beta: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer with its per-parameter state.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    steps: u64,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    fn init_state(&mut self, model: &Model<T>, second: bool) {
        if self.first.is_empty() {
            self.first = model.params().iter().map(|p| vec![T::zero(); p.numel()]).collect();
            if second {
                self.second = self.first.clone();
            }
        }
    }

    /// Applies one update with learning rate `lr` and clears gradients.
    pub fn step(&mut self, model: &mut Model<T>, lr: f64) -> Result<()> {
        match self.kind {
            OptimizerKind::Sgd => model.sgd_step(lr),
            OptimizerKind::Momentum { beta } => {
                let grads = model.take_grads()?;
                self.init_state(model, false);
                let (beta, lr) = (T::from_f64_lossy(beta), T::from_f64_lossy(lr));
                for ((p, g), v) in model.params_mut().iter_mut().zip(grads).zip(&mut self.first) {
                    for ((w, g), v) in p.data_mut().iter_mut().zip(g).zip(v.iter_mut()) {
                        *v = beta * *v + g;
                        *w -= lr * *v;
                    }
                }
                Ok(())
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let grads = model.take_grads()?;
                self.init_state(model, true);
                self.steps += 1;
                let t = self.steps as i32;
                let step = lr * (1.0 - beta2.powi(t)).sqrt() / (1.0 - beta1.powi(t));
                let (b1, b2) = (T::from_f64_lossy(beta1), T::from_f64_lossy(beta2));
                let (step, eps) = (T::from_f64_lossy(step), T::from_f64_lossy(eps));
                let one = T::one();
                for (((p, g), m), v) in model
                    .params_mut()
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for (((w, g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = b1 * *m + (one - b1) * g;
                        *v = b2 * *v + (one - b2) * g * g;
                        *w -= step * *m / (v.sqrt() + eps);
                    }
                }
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 100, 0.05, 0.0).unwrap(), 0.05);
        assert!(cosine_lr(100, 100, 0.05, 0.001).unwrap() - 0.001 < 1e-15);
        assert!((cosine_lr(50, 100, 0.05, 0.0).unwrap() - 0.025).abs() < 1e-15);
        assert!(cosine_lr(101, 100, 0.05, 0.0).is_err());
        assert!(cosine_lr(0, 0, 0.05, 0.0).is_err());
    }
}

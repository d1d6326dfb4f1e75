//! Reverse-mode autodiff on NCHW tensors, plus the interpolation (InterNet)
//! and reconstruction (SpeckleNet) networks built on it.
//!
//! Training runs in `f32`; every kernel is generic so the same graph can be
//! evaluated in `f64` for finite-difference checks.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod layers;
pub mod model;
pub mod optim;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod train;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use error::{NnError, Result};
pub use layers::LayerSpec;
pub use model::{build_internet, build_specklenet, Architecture, Model};
pub use optim::{cosine_lr, Optimizer, OptimizerKind};
pub use scalar::Scalar;
pub use tape::{LossKind, Tape, Var};
pub use tensor::Tensor;
pub use train::{fit, predict, LossName, TrainingConfig};

pub(crate) fn rng(seed: u64) -> speckle_core::rng::Rng {
    speckle_core::rng::seeded(seed)
}

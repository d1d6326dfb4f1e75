use std::path::Path;

use serde::{Deserialize, Serialize};
use speckle_core::{PitchIndex, Raster};
use speckle_nn::{
    build_internet, build_specklenet, fit, Architecture, Checkpoint, CheckpointMeta, LossName, Model, OptimizerKind,
    Tensor, TrainingConfig,
};

use crate::dataset::{normalize, Dataset};
use crate::error::{file_err, PipelineError, Result};

/// Training settings used for desk-scale runs: Adam with a cosine-decayed
/// step size.
pub fn desk_training(loss: LossName, epochs: usize, seed: u64) -> TrainingConfig {
    TrainingConfig {
        epochs,
        batch_size: 16,
        lr0: 0.002,
        lr_min: 0.0,
        loss,
        seed,
        optimizer: OptimizerKind::adam(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpeckleNetConfig {
    pub channels: usize,
    pub training: TrainingConfig,
}

impl Default for SpeckleNetConfig {
    fn default() -> Self {
        Self {
            channels: 12,
            training: desk_training(LossName::Npcc, 30, 7),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InterNetConfig {
    /// Rung index i of the input patterns (bin factor 2^i).
    pub pitch: u8,
    pub variant: u8,
    pub channels: usize,
    pub training: TrainingConfig,
}

impl Default for InterNetConfig {
    fn default() -> Self {
        Self {
            pitch: 2,
            variant: 1,
            channels: 12,
            training: desk_training(LossName::Comloss, 60, 11),
        }
    }
}

impl InterNetConfig {
    pub fn bin_factor(&self) -> usize {
        1 << self.pitch
    }

    /// Variant 2 trained on correlation alone is known to lose the
    /// intensity scale; allowed, but flagged.
    pub fn flag(&self) -> Option<String> {
        (self.variant == 2 && self.training.loss == LossName::Npcc)
            .then(|| "InterNet(cc)-2: correlation-only training of the dense decoder; expect poor MSE".to_string())
    }
}

/// Per-run training record, written next to the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub stage: String,
    pub sample_ids: Vec<usize>,
    pub epoch_losses: Vec<f64>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub checkpoint: Checkpoint,
    pub log: TrainingLog,
}

impl Trained {
    /// Writes `<stem>.sil` and `<stem>.log.json` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(crate::error::io_err(dir))?;
        self.checkpoint.save(&dir.join(format!("{stem}.sil")))?;
        let log = dir.join(format!("{stem}.log.json"));
        speckle_core::io::write_atomic(&log, &serde_json::to_vec_pretty(&self.log)?).map_err(file_err(log))
    }
}

pub(crate) fn stack(rasters: &[Raster]) -> Result<Tensor<f32>> {
    let (h, w) = rasters.first().map(Raster::shape).ok_or_else(|| PipelineError::Data("no rasters".into()))?;
    let mut data = Vec::with_capacity(rasters.len() * h * w);
    for r in rasters {
        if r.shape() != (h, w) {
            return Err(PipelineError::Data("rasters of mixed shape".into()));
        }
        data.extend_from_slice(r.data());
    }
    Ok(Tensor::new(vec![rasters.len(), 1, h, w], data)?)
}

pub(crate) fn unstack(t: &Tensor<f32>) -> Vec<Raster> {
    let s = t.shape();
    let (h, w) = (s[2], s[3]);
    t.data()
        .chunks_exact(h * w)
        .map(|c| Raster::new(w, h, c.to_vec()).expect("sized"))
        .collect()
}

fn gather(all: &Tensor<f32>, rows: &[usize]) -> Tensor<f32> {
    let per = all.numel() / all.shape()[0];
    let mut data = Vec::with_capacity(rows.len() * per);
    for &r in rows {
        data.extend_from_slice(&all.data()[r * per..(r + 1) * per]);
    }
    let mut shape = all.shape().to_vec();
    shape[0] = rows.len();
    Tensor::new(shape, data).expect("sized")
}

fn run(
    stage: &str,
    model: &mut Model<f32>,
    cfg: &TrainingConfig,
    inputs: &Tensor<f32>,
    targets: &Tensor<f32>,
) -> Result<Vec<f64>> {
    let rows: Vec<usize> = (0..inputs.shape()[0]).collect();
    fit(
        model,
        cfg,
        &rows,
        |batch| Ok((gather(inputs, batch), gather(targets, batch))),
        |epoch, loss| log::info!("{stage}: epoch {epoch} loss {loss:.5}"),
    )
    .map_err(|e| match PipelineError::from(e) {
        PipelineError::NonFinite { epoch, .. } => PipelineError::NonFinite {
            stage: stage.to_string(),
            epoch,
        },
        other => other,
    })
}

fn meta(arch: Architecture, model: &Model<f32>, cfg: &impl Serialize, seed: u64, losses: &[f64], ids: &[usize]) -> Result<CheckpointMeta> {
    Ok(CheckpointMeta {
        architecture: arch,
        input_shape: model.input_shape(),
        seed,
        final_loss: losses.last().copied(),
        epoch_losses: losses.to_vec(),
        config: serde_json::json!({ "settings": cfg, "train_ids": ids }),
    })
}

/// Training ids recorded in a checkpoint, if any.
pub fn checkpoint_train_ids(ck: &Checkpoint) -> Vec<usize> {
    ck.meta.config.get("train_ids").and_then(|v| serde_json::from_value(v.clone()).ok()).unwrap_or_default()
}

/// d0 speckle to hidden object, trained with NPCC on the training split.
pub fn train_specklenet(ds: &Dataset, cfg: &SpeckleNetConfig) -> Result<Trained> {
    if cfg.training.loss != LossName::Npcc {
        return Err(PipelineError::Config("SpeckleNet is trained with the npcc loss only".into()));
    }
    let ids = ds.manifest().train_ids.clone();
    let side = ds.manifest().size;
    let inputs: Vec<Raster> = ds.speckles(&ids, PitchIndex::Rung(0))?.iter().map(normalize).collect();
    let targets: Vec<Raster> = ds.objects(&ids)?.iter().map(|o| o.unit_target()).collect();
    let (x, y) = (stack(&inputs)?, stack(&targets)?);

    let mut model = build_specklenet::<f32>(cfg.channels, side, cfg.training.seed)?;
    let losses = run("specklenet", &mut model, &cfg.training, &x, &y)?;
    let arch = Architecture::SpeckleNet { channels: cfg.channels };
    let meta = meta(arch, &model, cfg, cfg.training.seed, &losses, &ids)?;
    Ok(Trained {
        checkpoint: Checkpoint { model, meta },
        log: TrainingLog {
            stage: "specklenet".into(),
            sample_ids: ids,
            epoch_losses: losses,
            notes: vec![],
        },
    })
}

/// Binned rung `d_i` to d0, trained on speckle patterns only: this path
/// never opens an object file.
pub fn train_internet(ds: &Dataset, cfg: &InterNetConfig) -> Result<Trained> {
    let pitch = PitchIndex::Rung(cfg.pitch);
    if !ds.manifest().has_rung(pitch) {
        return Err(PipelineError::Config(format!("dataset has no {pitch} rung")));
    }
    let n = cfg.bin_factor();
    let side = ds.manifest().size / n;
    let ids = ds.manifest().train_ids.clone();
    let inputs: Vec<Raster> = ds.speckles(&ids, pitch)?.iter().map(normalize).collect();
    let targets: Vec<Raster> = ds.speckles(&ids, PitchIndex::Rung(0))?.iter().map(normalize).collect();
    let (x, y) = (stack(&inputs)?, stack(&targets)?);

    let mut model = build_internet::<f32>(cfg.variant, n, cfg.channels, side, cfg.training.seed)?;
    let losses = run("internet", &mut model, &cfg.training, &x, &y)?;
    let arch = Architecture::InterNet {
        variant: cfg.variant,
        bin_factor: n,
        channels: cfg.channels,
    };
    let meta = meta(arch, &model, cfg, cfg.training.seed, &losses, &ids)?;
    Ok(Trained {
        checkpoint: Checkpoint { model, meta },
        log: TrainingLog {
            stage: format!("internet-{}-{pitch}", cfg.variant),
            sample_ids: ids,
            epoch_losses: losses,
            notes: cfg.flag().into_iter().collect(),
        },
    })
}

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use speckle_core::metrics::MetricsReport;

use crate::dataset::{generate_dataset, Dataset, DatasetConfig};
use crate::error::{PipelineError, Result};
use crate::evaluate::{evaluate_workflow, EvalConfig};
use crate::report::write_report;
use crate::training::{train_internet, train_specklenet, InterNetConfig, SpeckleNetConfig};

/// Everything one experiment needs; loadable from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Dataset root; the `SIL_DATA_DIR` environment variable or
    /// `<out-dir>/dataset` when absent.
    pub dataset: Option<PathBuf>,
    pub generation: DatasetConfig,
    pub specklenet: SpeckleNetConfig,
    /// One InterNet per entry; the target is always the d0 rung.
    pub internets: Vec<InterNetConfig>,
    pub specklenet_checkpoint: Option<PathBuf>,
    pub internet_checkpoints: Vec<PathBuf>,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            generation: DatasetConfig::default(),
            specklenet: SpeckleNetConfig::default(),
            internets: vec![InterNetConfig::default()],
            specklenet_checkpoint: None,
            internet_checkpoints: vec![],
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_slice(&bytes).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    /// Replaces every seed with ones derived from `seed`.
    pub fn reseed(&mut self, seed: u64) {
        self.generation.base_seed = seed;
        self.specklenet.training.seed = seed.wrapping_add(1);
        for (k, i) in self.internets.iter_mut().enumerate() {
            i.training.seed = seed.wrapping_add(2 + k as u64);
        }
    }
}

/// Paths of everything a full run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dataset: PathBuf,
    pub models: Vec<PathBuf>,
    pub report_files: Vec<PathBuf>,
    pub reports: Vec<MetricsReport>,
}

pub fn internet_stem(cfg: &InterNetConfig) -> String {
    let loss = serde_json::to_value(cfg.training.loss)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default();
    format!("internet{}_d{}_{loss}", cfg.variant, cfg.pitch)
}

/// Generate, train SpeckleNet and every InterNet, evaluate and report, all
/// under `out_dir`.
pub fn run_pipeline(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunOutput> {
    let data_dir = cfg.dataset.clone().unwrap_or_else(|| out_dir.join("dataset"));
    generate_dataset(&cfg.generation, &data_dir)?;
    let ds = Dataset::open(&data_dir)?;

    let models_dir = out_dir.join("models");
    let mut models = vec![];
    let sn = train_specklenet(&ds, &cfg.specklenet)?;
    sn.save(&models_dir, "specklenet")?;
    models.push(models_dir.join("specklenet.sil"));

    let mut internets = vec![];
    for ic in &cfg.internets {
        let trained = train_internet(&ds, ic)?;
        let stem = internet_stem(ic);
        trained.save(&models_dir, &stem)?;
        models.push(models_dir.join(format!("{stem}.sil")));
        internets.push(trained.checkpoint);
    }

    let eval = evaluate_workflow(&ds, &internets, Some(&sn.checkpoint), &cfg.eval)?;
    let report_files = write_report(&out_dir.join("report"), &eval.reports, &eval.examples)?;
    Ok(RunOutput {
        dataset: data_dir,
        models,
        report_files,
        reports: eval.reports,
    })
}

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use speckle_core::interp::{upsample, InterpMethod};
use speckle_core::metrics::{self, MetricsReport};
use speckle_core::{PitchIndex, Raster};
use speckle_nn::{predict, Architecture, Checkpoint, LossName};

use crate::dataset::{normalize, Dataset};
use crate::error::{PipelineError, Result};
use crate::training::{checkpoint_train_ids, stack, unstack};

/// Highest rung whose patterns go to SpeckleNet without interpolation.
pub const DIRECT_MAX_RUNG: u8 = 2;
const PREDICT_CHUNK: usize = 32;

/// How a binned pattern is brought back to camera resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Macro-pixels shown as they are (pixel replication), only for rungs
    /// up to d2; identity at d0.
    Direct,
    Nearest,
    Bilinear,
    Bicubic,
    Internet,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Direct, Method::Nearest, Method::Bilinear, Method::Bicubic, Method::Internet];

    pub fn name(self) -> &'static str {
        match self {
            Method::Direct => "direct",
            Method::Nearest => "nearest",
            Method::Bilinear => "bilinear",
            Method::Bicubic => "bicubic",
            Method::Internet => "internet",
        }
    }

    pub fn is_learned(self) -> bool {
        self == Method::Internet
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = PipelineError;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| PipelineError::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub methods: Vec<Method>,
    /// Rungs to evaluate; all rungs of the dataset when empty.
    pub rungs: Vec<u8>,
    pub success_threshold: f64,
    /// Pair budget of the mutual correlation estimate; exact when `None`.
    pub cm_max_pairs: Option<usize>,
    /// Test samples kept as rendered examples per cell.
    pub examples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            rungs: vec![],
            success_threshold: 0.5,
            cm_max_pairs: None,
            examples: 2,
        }
    }
}

/// Input / interpolated / target / reconstruction rasters of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// Report label of the column, e.g. `bicubic` or `internet(com)-1`.
    pub label: String,
    pub pitch: PitchIndex,
    pub id: usize,
    pub panels: Vec<Raster>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub reports: Vec<MetricsReport>,
    pub examples: Vec<Example>,
}

fn internets_for(internets: &[Checkpoint], n: usize) -> Vec<&Checkpoint> {
    internets
        .iter()
        .filter(|c| matches!(c.meta.architecture, Architecture::InterNet { bin_factor, .. } if bin_factor == n))
        .collect()
}

fn training_loss(ck: &Checkpoint) -> Option<LossName> {
    serde_json::from_value(ck.meta.config.pointer("/settings/training/loss")?.clone()).ok()
}

/// Report label of a trained InterNet, e.g. `internet(com)-1`.
pub fn internet_label(ck: &Checkpoint) -> String {
    let variant = match ck.meta.architecture {
        Architecture::InterNet { variant, .. } => variant,
        _ => 0,
    };
    let loss = match training_loss(ck) {
        Some(LossName::Comloss) => "com",
        Some(LossName::Npcc) => "cc",
        Some(LossName::Mse) => "mse",
        None => "?",
    };
    format!("internet({loss})-{variant}")
}

/// PCC per pair, with undefined values recorded as 0 and counted.
fn pcc_or_zero(a: &[Raster], b: &[Raster], what: &str, degenerate: &mut usize) -> Result<Vec<f64>> {
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(i, (x, y))| match metrics::pcc(x, y) {
            Ok(v) => Ok(v),
            Err(speckle_core::Error::Degenerate) => {
                log::warn!("{what}: sample {i} is degenerate; PCC recorded as 0");
                *degenerate += 1;
                Ok(0.0)
            }
            Err(e) => Err(e.into()),
        })
        .collect()
}

fn cm(rasters: &[Raster], max_pairs: Option<usize>) -> f64 {
    match metrics::mutual_correlation(rasters, max_pairs) {
        Ok(v) => v,
        Err(e) => {
            log::warn!("mutual correlation undefined ({e}); recorded as 0");
            0.0
        }
    }
}

/// Interpolates every test pattern of each rung with each method, scores it
/// against d0 and, when a SpeckleNet is given, against the hidden object.
pub fn evaluate_workflow(
    ds: &Dataset,
    internets: &[Checkpoint],
    specklenet: Option<&Checkpoint>,
    cfg: &EvalConfig,
) -> Result<Evaluation> {
    if cfg.methods.is_empty() {
        return Err(PipelineError::Config("no evaluation methods given".into()));
    }
    let m = ds.manifest();
    let test_ids = m.test_ids.clone();
    for ck in internets.iter().chain(specklenet) {
        if let Some(id) = checkpoint_train_ids(ck).into_iter().find(|id| test_ids.contains(id)) {
            return Err(PipelineError::Data(format!("test sample {id} was used for training")));
        }
    }
    let rungs: Vec<PitchIndex> = if cfg.rungs.is_empty() {
        m.ladder.clone()
    } else {
        cfg.rungs.iter().map(|&i| PitchIndex::Rung(i)).collect()
    };

    let d0: Vec<Raster> = ds.speckles(&test_ids, PitchIndex::Rung(0))?.iter().map(normalize).collect();
    let digits: Vec<Raster> = if specklenet.is_some() {
        ds.objects(&test_ids)?.iter().map(|o| o.unit_target()).collect()
    } else {
        vec![]
    };

    let mut reports = Vec::new();
    let mut examples = Vec::new();
    for &pitch in &rungs {
        if !m.has_rung(pitch) {
            return Err(PipelineError::Config(format!("dataset has no {pitch} rung")));
        }
        let n = pitch.bin_factor().expect("ladder rung");
        let PitchIndex::Rung(i) = pitch else { unreachable!() };
        let binned: Vec<Raster> = ds.speckles(&test_ids, pitch)?.iter().map(normalize).collect();
        let cm_before = cm(&binned, cfg.cm_max_pairs);

        // (label, notes, outputs) per evaluated column
        let mut columns: Vec<(String, Vec<String>, Vec<Raster>)> = vec![];
        for &method in &cfg.methods {
            match method {
                Method::Direct if i <= DIRECT_MAX_RUNG => {
                    let outputs = binned
                        .iter()
                        .map(|b| upsample(b, n, InterpMethod::Nearest))
                        .collect::<std::result::Result<_, _>>()?;
                    columns.push((method.name().into(), vec![], outputs));
                }
                Method::Direct => {}
                _ if n == 1 => {}
                Method::Nearest | Method::Bilinear | Method::Bicubic => {
                    let im = match method {
                        Method::Nearest => InterpMethod::Nearest,
                        Method::Bilinear => InterpMethod::Bilinear,
                        _ => InterpMethod::Bicubic,
                    };
                    let outputs = binned.iter().map(|b| upsample(b, n, im)).collect::<std::result::Result<_, _>>()?;
                    columns.push((method.name().into(), vec![], outputs));
                }
                Method::Internet => {
                    let cks = internets_for(internets, n);
                    if cks.is_empty() {
                        log::warn!("no InterNet checkpoint for {pitch}; skipped");
                    }
                    for ck in cks {
                        let mut notes = vec![];
                        let dense = matches!(ck.meta.architecture, Architecture::InterNet { variant: 2, .. });
                        if dense && training_loss(ck) == Some(LossName::Npcc) {
                            notes.push("InterNet(cc)-2: correlation-only training of the dense decoder".into());
                        }
                        let outputs = unstack(&predict(&ck.model, &stack(&binned)?, PREDICT_CHUNK)?);
                        columns.push((internet_label(ck), notes, outputs));
                    }
                }
            }
        }

        for (label, notes, outputs) in columns {
            let mut degenerate = 0;
            let what = format!("{label} at {pitch}");
            let per_sample_pcc = pcc_or_zero(&outputs, &d0, &what, &mut degenerate)?;
            let per_sample_mse = outputs
                .iter()
                .zip(&d0)
                .map(|(a, b)| metrics::mse(a, b))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let cm_after = cm(&outputs, cfg.cm_max_pairs);

            let (mut per_sample_recon_pcc, mut recon_mean_pcc, mut success_rate) = (vec![], None, None);
            let mut recons = vec![];
            if let Some(sn) = specklenet {
                recons = unstack(&predict(&sn.model, &stack(&outputs)?, PREDICT_CHUNK)?);
                per_sample_recon_pcc = pcc_or_zero(&recons, &digits, &format!("reconstruction, {what}"), &mut degenerate)?;
                recon_mean_pcc = Some(metrics::mean(&per_sample_recon_pcc));
                success_rate = Some(metrics::success_rate(&recons, &digits, cfg.success_threshold)?);
            }

            for k in 0..cfg.examples.min(test_ids.len()) {
                let mut panels = vec![
                    upsample(&binned[k], n, InterpMethod::Nearest)?,
                    outputs[k].clone(),
                    d0[k].clone(),
                ];
                if let Some(r) = recons.get(k) {
                    panels.push(r.clone());
                    panels.push(digits[k].clone());
                }
                examples.push(Example {
                    label: label.clone(),
                    pitch,
                    id: test_ids[k],
                    panels,
                });
            }

            let report = MetricsReport {
                method: label,
                pitch_index: pitch,
                mean_pcc: metrics::mean(&per_sample_pcc),
                mean_mse: metrics::mean(&per_sample_mse),
                per_sample_pcc,
                per_sample_mse,
                cm_before,
                cm_after,
                per_sample_recon_pcc,
                recon_mean_pcc,
                success_rate,
                degenerate,
                notes,
            };
            report.validate()?;
            reports.push(report);
        }
    }
    Ok(Evaluation { reports, examples })
}

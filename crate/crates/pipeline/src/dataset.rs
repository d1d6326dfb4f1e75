//! On-disk speckle/object datasets.
//!
//! Layout under the dataset root:
//!
//! ```text
//! manifest.json          written last; its presence marks a complete dataset
//! objects/00000.pho      phase object per sample (PHO1)
//! d0/00000.spk           camera-resolution speckle (SPK1)
//! d3/00000.spk           the same pattern binned 8x8, one directory per rung
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use speckle_core::optics::{self, GrayImage, PhaseObject, Propagator, SpecklePattern};
use speckle_core::{io, metrics, rng, sampling, PitchIndex, Raster};

use crate::error::{file_err, io_err, PipelineError, Result};
use crate::glyphs;
use crate::idx::{parse_idx, IdxData};

pub const MANIFEST: &str = "manifest.json";
/// d0 patterns used to measure the sampling factor of a dataset.
const F_PROBE: usize = 16;
const CALIBRATION_TRIALS: usize = 16;

/// Where the phase objects come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectSource {
    /// Procedurally rendered stroke digits.
    Synthetic,
    /// IDX image file (and optional label file), used in file order.
    Idx { images: PathBuf, labels: Option<PathBuf> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub count: usize,
    pub base_seed: u64,
    /// Raster side S of objects and d0 patterns.
    pub size: usize,
    /// Sampling factor the pad factor is calibrated to.
    pub target_f: f64,
    /// Skips calibration when set.
    pub pad_factor: Option<usize>,
    /// Bin factors of the ladder, 1 first.
    pub ladder: Vec<usize>,
    /// Fraction of samples held out for testing.
    pub test_fraction: f64,
    pub source: ObjectSource,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            count: 2200,
            base_seed: 1,
            size: 64,
            target_f: 17.0,
            pad_factor: None,
            ladder: vec![1, 2, 4, 8, 16],
            test_fraction: 0.01,
            source: ObjectSource::Synthetic,
        }
    }
}

impl DatasetConfig {
    pub fn test_count(&self) -> usize {
        ((self.count as f64 * self.test_fraction).round() as usize).clamp(1, self.count - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.count < 2 {
            return bad(format!("count must be >= 2, got {}", self.count));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction {} outside (0, 1)", self.test_fraction));
        }
        if self.source == ObjectSource::Synthetic && self.size < glyphs::GLYPH_SIZE {
            return bad(format!("S = {} is smaller than the {} px digit glyphs", self.size, glyphs::GLYPH_SIZE));
        }
        if self.ladder.first() != Some(&1) {
            return bad("ladder must start with bin factor 1".into());
        }
        for &n in &self.ladder {
            if !n.is_power_of_two() || !self.size.is_multiple_of(n) {
                return bad(format!("bin factor {n} must be a power of two dividing S = {}", self.size));
            }
        }
        if self.ladder.windows(2).any(|w| w[0] >= w[1]) {
            return bad("ladder must be strictly increasing".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: usize,
    pub label: Option<u8>,
    /// Path of the phase object, relative to the dataset root.
    pub object: String,
    /// Speckle file per rung ("d0", "d1", ...), relative to the root.
    pub speckles: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub base_seed: u64,
    pub count: usize,
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
    pub size: usize,
    pub pad_factor: usize,
    /// Mean sampling factor measured on the first d0 patterns.
    pub measured_f: f64,
    pub medium_seed: u64,
    pub ladder: Vec<PitchIndex>,
    pub source: ObjectSource,
    pub samples: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.count];
        for &id in self.train_ids.iter().chain(&self.test_ids) {
            if id >= self.count || std::mem::replace(&mut seen[id], true) {
                return Err(PipelineError::Data(format!("sample {id} listed twice or out of range")));
            }
        }
        if self.samples.len() != self.count {
            return Err(PipelineError::Data("sample records do not match count".into()));
        }
        Ok(())
    }

    pub fn has_rung(&self, pitch: PitchIndex) -> bool {
        self.ladder.contains(&pitch)
    }
}

fn sample_path(dir: &str, id: usize, ext: &str) -> String {
    format!("{dir}/{id:05}.{ext}")
}

fn load_gray_source(source: &ObjectSource, count: usize) -> Result<Option<(Vec<GrayImage>, Option<Vec<u8>>)>> {
    let ObjectSource::Idx { images, labels } = source else {
        return Ok(None);
    };
    let read = |p: &Path| fs::read(p).map_err(io_err(p));
    let IdxData::Images(imgs) = parse_idx(&read(images)?)? else {
        return Err(PipelineError::Data(format!("{} is not an IDX image file", images.display())));
    };
    if imgs.len() < count {
        return Err(PipelineError::Data(format!("{} holds {} images, {count} requested", images.display(), imgs.len())));
    }
    let labels = match labels {
        Some(p) => match parse_idx(&read(p)?)? {
            IdxData::Labels(l) if l.len() >= count => Some(l),
            _ => return Err(PipelineError::Data(format!("{} is not a matching IDX label file", p.display()))),
        },
        None => None,
    };
    Ok(Some((imgs, labels)))
}

/// Simulates a dataset into `root` and writes its manifest last.
pub fn generate_dataset(cfg: &DatasetConfig, root: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    fs::create_dir_all(root).map_err(io_err(root))?;
    let manifest_path = root.join(MANIFEST);
    if manifest_path.exists() {
        fs::remove_file(&manifest_path).map_err(io_err(&manifest_path))?;
    }

    let pad_factor = match cfg.pad_factor {
        Some(p) => p,
        None => optics::calibrate_pad_factor(cfg.target_f, cfg.size, CALIBRATION_TRIALS)?.pad_factor,
    };
    let propagator = Propagator::new(cfg.size, pad_factor)?;
    let medium_seed = cfg.base_seed;
    let medium = optics::make_medium(medium_seed, cfg.size)?;
    let gray = load_gray_source(&cfg.source, cfg.count)?;

    let ladder: Vec<PitchIndex> = cfg
        .ladder
        .iter()
        .map(|&n| PitchIndex::for_bin_factor(n).expect("validated power of two"))
        .collect();
    for dir in ladder.iter().map(|p| p.to_string()).chain(["objects".to_string()]) {
        fs::create_dir_all(root.join(&dir)).map_err(io_err(root.join(&dir)))?;
    }

    let records: Vec<(SampleRecord, Option<f64>)> = (0..cfg.count)
        .into_par_iter()
        .map(|id| -> Result<_> {
            let (image, label) = match &gray {
                Some((imgs, labels)) => (imgs[id].clone(), labels.as_ref().map(|l| l[id])),
                None => {
                    let mut r = rng::stream(cfg.base_seed, 1 + id as u64);
                    let digit = r.gen_range(0..10u8);
                    (glyphs::render(digit, &mut r, glyphs::GLYPH_SIZE), Some(digit))
                }
            };
            let object = optics::load_phase_object(&image, cfg.size, label)?;
            let d0 = propagator.propagate(&object, &medium)?;
            let f = if id < F_PROBE {
                Some(sampling::sampling_factor(&d0.intensity)?)
            } else {
                None
            };

            let object_rel = sample_path("objects", id, "pho");
            io::write_phase(&root.join(&object_rel), &object).map_err(file_err(root.join(&object_rel)))?;
            let mut speckles = BTreeMap::new();
            for (&n, pitch) in cfg.ladder.iter().zip(&ladder) {
                let pattern = if n == 1 { d0.clone() } else { sampling::bin(&d0, n)? };
                let rel = sample_path(&pitch.to_string(), id, "spk");
                io::write_speckle(&root.join(&rel), &pattern).map_err(file_err(root.join(&rel)))?;
                speckles.insert(pitch.to_string(), rel);
            }
            Ok((
                SampleRecord {
                    id,
                    label,
                    object: object_rel,
                    speckles,
                },
                f,
            ))
        })
        .collect::<Result<_>>()?;

    let probes: Vec<f64> = records.iter().filter_map(|r| r.1).collect();
    let test_count = cfg.test_count();
    let train_count = cfg.count - test_count;
    let manifest = DatasetManifest {
        base_seed: cfg.base_seed,
        count: cfg.count,
        train_ids: (0..train_count).collect(),
        test_ids: (train_count..cfg.count).collect(),
        size: cfg.size,
        pad_factor,
        measured_f: metrics::mean(&probes),
        medium_seed,
        ladder,
        source: cfg.source.clone(),
        samples: records.into_iter().map(|r| r.0).collect(),
    };
    let json = serde_json::to_vec_pretty(&manifest)?;
    io::write_atomic(&manifest_path, &json).map_err(file_err(&manifest_path))?;
    Ok(manifest)
}

/// What a dataset read touched, for isolation audits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Access {
    Speckle { id: usize, pitch: PitchIndex },
    Object { id: usize },
}

/// An opened dataset. Every file read is recorded in an access log.
#[derive(Debug)]
pub struct Dataset {
    root: PathBuf,
    manifest: DatasetManifest,
    log: Mutex<Vec<Access>>,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST);
        let bytes = fs::read(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                PipelineError::Data(format!("{}: no manifest (dataset missing or incomplete)", root.display()))
            } else {
                PipelineError::Io { path: path.clone(), source: e }
            }
        })?;
        let manifest: DatasetManifest = serde_json::from_slice(&bytes)
            .map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))?;
        manifest.validate()?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
            log: Mutex::new(Vec::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    fn record(&self, id: usize) -> Result<&SampleRecord> {
        self.manifest
            .samples
            .get(id)
            .filter(|r| r.id == id)
            .ok_or_else(|| PipelineError::Data(format!("no sample {id}")))
    }

    pub fn speckle_path(&self, id: usize, pitch: PitchIndex) -> Result<PathBuf> {
        let rel = self
            .record(id)?
            .speckles
            .get(&pitch.to_string())
            .ok_or_else(|| PipelineError::Data(format!("sample {id} has no {pitch} pattern")))?;
        Ok(self.root.join(rel))
    }

    pub fn speckle(&self, id: usize, pitch: PitchIndex) -> Result<SpecklePattern> {
        let path = self.speckle_path(id, pitch)?;
        self.log.lock().expect("log").push(Access::Speckle { id, pitch });
        io::read_speckle(&path).map_err(file_err(path))
    }

    pub fn object(&self, id: usize) -> Result<PhaseObject> {
        let path = self.root.join(&self.record(id)?.object);
        self.log.lock().expect("log").push(Access::Object { id });
        io::read_phase(&path).map_err(file_err(path))
    }

    /// Reads `ids` at `pitch` in parallel, in id order.
    pub fn speckles(&self, ids: &[usize], pitch: PitchIndex) -> Result<Vec<SpecklePattern>> {
        ids.par_iter().map(|&id| self.speckle(id, pitch)).collect()
    }

    pub fn objects(&self, ids: &[usize]) -> Result<Vec<PhaseObject>> {
        ids.par_iter().map(|&id| self.object(id)).collect()
    }

    pub fn access_log(&self) -> Vec<Access> {
        let mut v = self.log.lock().expect("log").clone();
        v.sort();
        v
    }

    pub fn clear_access_log(&self) {
        self.log.lock().expect("log").clear();
    }

    /// Checks that every binned rung equals re-binning the stored d0 pattern.
    pub fn verify_rungs(&self, ids: &[usize]) -> Result<()> {
        for &id in ids {
            let d0 = self.speckle(id, PitchIndex::Rung(0))?;
            for &pitch in &self.manifest.ladder {
                let n = pitch.bin_factor().expect("ladder rung");
                if n == 1 {
                    continue;
                }
                let stored = self.speckle(id, pitch)?;
                let rebinned = sampling::bin_raster(&d0.intensity, n)?;
                if stored.intensity != rebinned {
                    return Err(PipelineError::Data(format!("sample {id}: {pitch} differs from re-binned d0")));
                }
            }
        }
        Ok(())
    }
}

/// Per-pattern mean normalization applied to every network input/target.
pub fn normalize(p: &SpecklePattern) -> Raster {
    p.intensity.normalized_by_mean()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> DatasetConfig {
        DatasetConfig {
            count: 10,
            size: 32,
            pad_factor: Some(4),
            ladder: vec![1, 2, 4],
            test_fraction: 0.2,
            ..Default::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(tiny().validate().is_ok());
        assert!(DatasetConfig { count: 1, ..tiny() }.validate().is_err());
        assert!(DatasetConfig { ladder: vec![1, 3], ..tiny() }.validate().is_err());
        assert!(DatasetConfig { ladder: vec![2, 4], ..tiny() }.validate().is_err());
        assert!(DatasetConfig { ladder: vec![1, 64], ..tiny() }.validate().is_err());
        assert!(DatasetConfig { size: 16, ladder: vec![1, 2], ..tiny() }.validate().is_err());
        assert_eq!(DatasetConfig { count: 20000, ..Default::default() }.test_count(), 200);
    }

    #[test]
    fn generate_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_dataset(&tiny(), dir.path()).unwrap();
        assert_eq!((m.train_ids.len(), m.test_ids.len()), (8, 2));
        let ds = Dataset::open(dir.path()).unwrap();
        assert_eq!(ds.manifest(), &m);
        ds.verify_rungs(&(0..10).collect::<Vec<_>>()).unwrap();
        let p = ds.speckle(3, PitchIndex::Rung(2)).unwrap();
        assert_eq!(p.intensity.shape(), (8, 8));
        assert_eq!(ds.object(3).unwrap().source_label(), m.samples[3].label);
        assert_eq!(ds.access_log().iter().filter(|a| matches!(a, Access::Object { .. })).count(), 1);
    }

    #[test]
    fn missing_manifest_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(Dataset::open(dir.path()), Err(PipelineError::Data(_))));
    }
}

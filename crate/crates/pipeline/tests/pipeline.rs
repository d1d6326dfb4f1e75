use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use speckle_core::{sampling, PitchIndex};
use speckle_nn::{Checkpoint, LossName, OptimizerKind, TrainingConfig};
use speckle_pipeline::dataset::{normalize, Access, ObjectSource};
use speckle_pipeline::evaluate::Method;
use speckle_pipeline::idx::{encode_images, encode_labels};
use speckle_pipeline::report::{from_json, to_json};
use speckle_pipeline::training::{checkpoint_train_ids, desk_training, TrainingLog};
use speckle_pipeline::{
    evaluate_workflow, generate_dataset, train_internet, train_specklenet, Dataset, DatasetConfig, EvalConfig,
    InterNetConfig, PipelineError, SpeckleNetConfig,
};

fn small() -> DatasetConfig {
    DatasetConfig {
        count: 24,
        size: 32,
        pad_factor: Some(4),
        ladder: vec![1, 2, 4],
        test_fraction: 0.25,
        ..Default::default()
    }
}

fn quick(loss: LossName, seed: u64) -> TrainingConfig {
    TrainingConfig {
        batch_size: 4,
        ..desk_training(loss, 2, seed)
    }
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn same_seed_gives_byte_identical_dataset() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_dataset(&small(), a.path()).unwrap();
    generate_dataset(&small(), b.path()).unwrap();
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    // manifest + 24 objects + 24 x 3 rungs
    assert_eq!(ta.len(), 1 + 24 + 24 * 3);
    assert_eq!(ta, tb);

    let c = tempfile::tempdir().unwrap();
    generate_dataset(&DatasetConfig { base_seed: 2, ..small() }, c.path()).unwrap();
    assert_ne!(ta["d0/00000.spk"], tree(c.path())["d0/00000.spk"]);
}

#[test]
fn regeneration_overwrites_in_place() {
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(&small(), dir.path()).unwrap();
    let first = tree(dir.path());
    generate_dataset(&small(), dir.path()).unwrap();
    assert_eq!(first, tree(dir.path()));
}

#[test]
fn stored_rungs_match_rebinned_d0() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_dataset(&small(), dir.path()).unwrap();
    let ds = Dataset::open(dir.path()).unwrap();
    ds.verify_rungs(&(0..m.count).collect::<Vec<_>>()).unwrap();

    // independent re-binning: plain block sums over the stored d0
    let d0 = ds.speckle(5, PitchIndex::Rung(0)).unwrap().intensity;
    let d2 = ds.speckle(5, PitchIndex::Rung(2)).unwrap().intensity;
    for r in 0..8 {
        for c in 0..8 {
            let mut s = 0.0f64;
            for dr in 0..4 {
                for dc in 0..4 {
                    s += d0.get(4 * r + dr, 4 * c + dc) as f64;
                }
            }
            let want = s / 16.0;
            assert!((d2.get(r, c) as f64 - want).abs() <= 1e-5 * want.abs().max(1.0));
        }
    }
    assert_eq!(sampling::bin_raster(&d0, 4).unwrap(), d2);
}

#[test]
fn split_sizes_and_disjointness() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_dataset(&small(), dir.path()).unwrap();
    assert_eq!(m.test_ids.len(), 6);
    assert_eq!(m.train_ids.len(), 18);
    assert!(m.train_ids.iter().all(|id| !m.test_ids.contains(id)));
    let mut all: Vec<usize> = m.train_ids.iter().chain(&m.test_ids).copied().collect();
    all.sort();
    assert_eq!(all, (0..24).collect::<Vec<_>>());

    let default = DatasetConfig {
        count: 1000,
        ..Default::default()
    };
    assert_eq!(default.test_count(), 10);
}

#[test]
fn internet_training_reads_only_speckle_of_the_training_split() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_dataset(&small(), dir.path()).unwrap();
    let ds = Dataset::open(dir.path()).unwrap();
    let cfg = InterNetConfig {
        channels: 4,
        training: quick(LossName::Comloss, 3),
        ..Default::default()
    };
    let trained = train_internet(&ds, &cfg).unwrap();
    let log = ds.access_log();
    assert!(!log.is_empty());
    for a in &log {
        match a {
            Access::Object { id } => panic!("object {id} opened during InterNet training"),
            Access::Speckle { id, pitch } => {
                assert!(m.train_ids.contains(id), "test sample {id} read");
                assert!(matches!(pitch, PitchIndex::Rung(0) | PitchIndex::Rung(2)));
            }
        }
    }
    assert_eq!(trained.log.sample_ids, m.train_ids);
    assert_eq!(checkpoint_train_ids(&trained.checkpoint), m.train_ids);
    assert_eq!(trained.log.epoch_losses.len(), 2);
}

#[test]
fn specklenet_training_is_deterministic_and_split_clean() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_dataset(&small(), dir.path()).unwrap();
    let ds = Dataset::open(dir.path()).unwrap();
    let cfg = SpeckleNetConfig {
        channels: 4,
        training: quick(LossName::Npcc, 5),
    };
    let a = train_specklenet(&ds, &cfg).unwrap();
    for acc in ds.access_log() {
        let id = match acc {
            Access::Object { id } | Access::Speckle { id, .. } => id,
        };
        assert!(m.train_ids.contains(&id));
    }
    let b = train_specklenet(&ds, &cfg).unwrap();
    assert_eq!(a.checkpoint.to_bytes().unwrap(), b.checkpoint.to_bytes().unwrap());
    assert_eq!(a.log, b.log);

    let other = train_specklenet(
        &ds,
        &SpeckleNetConfig {
            training: quick(LossName::Npcc, 6),
            ..cfg.clone()
        },
    )
    .unwrap();
    assert_ne!(a.checkpoint.to_bytes().unwrap(), other.checkpoint.to_bytes().unwrap());

    let bad = SpeckleNetConfig {
        training: quick(LossName::Mse, 5),
        ..cfg
    };
    assert!(matches!(train_specklenet(&ds, &bad), Err(PipelineError::Config(_))));
}

#[test]
fn saved_training_artifacts_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(&small(), &dir.path().join("data")).unwrap();
    let ds = Dataset::open(&dir.path().join("data")).unwrap();
    let cfg = InterNetConfig {
        channels: 4,
        variant: 2,
        training: quick(LossName::Npcc, 9),
        ..Default::default()
    };
    let t = train_internet(&ds, &cfg).unwrap();
    assert_eq!(t.log.notes.len(), 1);
    t.save(&dir.path().join("models"), "net").unwrap();
    let ck = Checkpoint::load(&dir.path().join("models/net.sil")).unwrap();
    assert_eq!(ck.to_bytes().unwrap(), t.checkpoint.to_bytes().unwrap());
    let log: TrainingLog = serde_json::from_slice(&fs::read(dir.path().join("models/net.log.json")).unwrap()).unwrap();
    assert_eq!(log, t.log);
}

#[test]
fn internet_needs_a_supported_rung() {
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(&small(), dir.path()).unwrap();
    let ds = Dataset::open(dir.path()).unwrap();
    for pitch in [1, 3] {
        let cfg = InterNetConfig {
            pitch,
            channels: 4,
            training: quick(LossName::Comloss, 1),
            ..Default::default()
        };
        assert!(matches!(train_internet(&ds, &cfg), Err(PipelineError::Config(_))), "pitch {pitch}");
    }
}

#[test]
fn evaluation_scores_every_method_on_the_test_split() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_dataset(&small(), dir.path()).unwrap();
    let ds = Dataset::open(dir.path()).unwrap();
    let net = train_internet(
        &ds,
        &InterNetConfig {
            channels: 4,
            training: quick(LossName::Comloss, 2),
            ..Default::default()
        },
    )
    .unwrap();
    let sn = train_specklenet(
        &ds,
        &SpeckleNetConfig {
            channels: 4,
            training: quick(LossName::Npcc, 2),
        },
    )
    .unwrap();
    ds.clear_access_log();

    let cfg = EvalConfig::default();
    let eval = evaluate_workflow(&ds, std::slice::from_ref(&net.checkpoint), Some(&sn.checkpoint), &cfg).unwrap();
    let cells: Vec<(String, String)> = eval.reports.iter().map(|r| (r.pitch_index.to_string(), r.method.clone())).collect();
    let expect = |p: &str, m: &str| cells.contains(&(p.to_string(), m.to_string()));
    assert!(expect("d0", "direct") && expect("d2", "direct") && expect("d2", "internet(com)-1"));
    assert!(expect("d1", "bicubic") && !cells.iter().any(|(p, m)| p == "d1" && m.starts_with("internet")) && !expect("d0", "bicubic"));
    for r in &eval.reports {
        assert_eq!(r.per_sample_pcc.len(), m.test_ids.len());
        assert_eq!(r.per_sample_recon_pcc.len(), m.test_ids.len());
        assert!(r.success_rate.is_some());
    }
    // d0 fed directly scores a PCC of exactly 1 against itself
    let direct0 = eval.reports.iter().find(|r| r.method == "direct" && r.pitch_index == PitchIndex::Rung(0)).unwrap();
    assert!((direct0.mean_pcc - 1.0).abs() < 1e-9);
    assert!(ds
        .access_log()
        .iter()
        .all(|a| matches!(a, Access::Object { id } | Access::Speckle { id, .. } if m.test_ids.contains(id))));

    let empty = EvalConfig { methods: vec![], ..cfg.clone() };
    assert!(matches!(evaluate_workflow(&ds, &[], None, &empty), Err(PipelineError::Config(_))));

    let json = to_json(&eval.reports).unwrap();
    assert_eq!(from_json(&json).unwrap(), eval.reports);
    assert_eq!("Bicubic".parse::<Method>().unwrap(), Method::Bicubic);
    assert!("spline".parse::<Method>().is_err());
}

#[test]
fn evaluation_rejects_models_trained_on_test_samples() {
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(&small(), dir.path()).unwrap();
    let ds = Dataset::open(dir.path()).unwrap();
    let mut net = train_internet(
        &ds,
        &InterNetConfig {
            channels: 4,
            training: quick(LossName::Comloss, 2),
            ..Default::default()
        },
    )
    .unwrap()
    .checkpoint;
    net.meta.config["train_ids"] = serde_json::json!([0, 1, 23]);
    let err = evaluate_workflow(&ds, &[net], None, &EvalConfig::default()).unwrap_err();
    assert!(matches!(err, PipelineError::Data(_)));
}

#[test]
fn idx_source_is_used_in_file_order() {
    let dir = tempfile::tempdir().unwrap();
    let images: Vec<speckle_core::optics::GrayImage> = (0..6)
        .map(|k| {
            let px = (0..28 * 28).map(|i| if (i / 28 + k) % 5 == 0 { 255 } else { (i % 7) as u8 }).collect();
            speckle_core::optics::GrayImage::new(28, 28, px).unwrap()
        })
        .collect();
    let (img_path, lab_path) = (dir.path().join("img.idx"), dir.path().join("lab.idx"));
    fs::write(&img_path, encode_images(&images)).unwrap();
    fs::write(&lab_path, encode_labels(&[3, 1, 4, 1, 5, 9])).unwrap();
    let cfg = DatasetConfig {
        count: 6,
        test_fraction: 0.5,
        source: ObjectSource::Idx {
            images: img_path.clone(),
            labels: Some(lab_path),
        },
        ..small()
    };
    let m = generate_dataset(&cfg, &dir.path().join("ds")).unwrap();
    let labels: Vec<Option<u8>> = m.samples.iter().map(|s| s.label).collect();
    assert_eq!(labels, [3, 1, 4, 1, 5, 9].map(Some));

    let too_many = DatasetConfig { count: 7, ..cfg.clone() };
    assert!(generate_dataset(&too_many, &dir.path().join("ds2")).is_err());
    let not_idx = DatasetConfig {
        source: ObjectSource::Idx {
            images: dir.path().join("lab.idx"),
            labels: None,
        },
        ..cfg
    };
    assert!(generate_dataset(&not_idx, &dir.path().join("ds3")).is_err());
}

#[test]
fn normalization_is_by_mean() {
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(&small(), dir.path()).unwrap();
    let ds = Dataset::open(dir.path()).unwrap();
    let p = ds.speckle(0, PitchIndex::Rung(1)).unwrap();
    let n = normalize(&p);
    let mean: f64 = n.data().iter().map(|&v| v as f64).sum::<f64>() / n.data().len() as f64;
    assert!((mean - 1.0).abs() < 1e-5);
    let ratio = n.get(1, 2) as f64 / p.intensity.get(1, 2) as f64;
    let ratio2 = n.get(3, 0) as f64 / p.intensity.get(3, 0) as f64;
    assert!((ratio - ratio2).abs() < 1e-5 * ratio);
}

#[test]
fn momentum_is_accepted_by_training() {
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(&small(), dir.path()).unwrap();
    let ds = Dataset::open(dir.path()).unwrap();
    let cfg = InterNetConfig {
        channels: 4,
        training: TrainingConfig {
            optimizer: OptimizerKind::Momentum { beta: 0.9 },
            lr0: 0.01,
            ..quick(LossName::Mse, 4)
        },
        ..Default::default()
    };
    let t = train_internet(&ds, &cfg).unwrap();
    assert!(t.log.epoch_losses.iter().all(|l| l.is_finite()));
}

#[test]
fn coarse_binning_raises_mutual_correlation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = DatasetConfig {
        count: 100,
        size: 128,
        ladder: vec![1, 32],
        ..Default::default()
    };
    let m = generate_dataset(&cfg, dir.path()).unwrap();
    let ds = Dataset::open(dir.path()).unwrap();
    let ids: Vec<usize> = (0..m.count).collect();
    let cm = |pitch| {
        let pats: Vec<_> = ds.speckles(&ids, pitch).unwrap().iter().map(normalize).collect();
        speckle_core::metrics::mutual_correlation(&pats, None).unwrap()
    };
    let (fine, coarse) = (cm(PitchIndex::Rung(0)), cm(PitchIndex::Rung(5)));
    assert!(coarse > fine, "C_m d0 {fine:.3}, d5 {coarse:.3}");
}

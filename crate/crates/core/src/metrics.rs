//! Similarity metrics and the losses built from them.
//!
//! Everything is accumulated in `f64` whatever the raster storage precision.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::raster::{PitchIndex, Raster};
use crate::rng;

const PAIR_SUBSAMPLE_SEED: u64 = 0xc0_77e1;

/// Kahan-compensated accumulator.
#[derive(Debug, Default, Clone, Copy)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, v: f64) {
        let y = v - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn merge(&mut self, other: KahanSum) {
        self.add(other.sum);
        self.add(-other.comp);
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Mean-centered copy scaled to unit norm, or `None` for a constant raster.
fn standardize(x: &Raster) -> Option<Vec<f64>> {
    standardize_values(x.data().iter().map(|&a| a as f64))
}

fn standardize_values(values: impl ExactSizeIterator<Item = f64> + Clone) -> Option<Vec<f64>> {
    let m = values.clone().sum::<f64>() / values.len() as f64;
    let mut v: Vec<f64> = values.map(|a| a - m).collect();
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return None;
    }
    v.iter_mut().for_each(|a| *a /= norm);
    Some(v)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Pearson correlation coefficient over all cells.
pub fn pcc(a: &Raster, b: &Raster) -> Result<f64> {
    a.same_shape(b)?;
    let za = standardize(a).ok_or(Error::Degenerate)?;
    let zb = standardize(b).ok_or(Error::Degenerate)?;
    Ok(dot(&za, &zb).clamp(-1.0, 1.0))
}

/// PCC of two equal-length `f64` sequences.
pub fn pcc_values(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::ShapeMismatch {
            left: (1, a.len()),
            right: (1, b.len()),
        });
    }
    let za = standardize_values(a.iter().copied()).ok_or(Error::Degenerate)?;
    let zb = standardize_values(b.iter().copied()).ok_or(Error::Degenerate)?;
    Ok(dot(&za, &zb).clamp(-1.0, 1.0))
}

pub fn npcc(a: &Raster, b: &Raster) -> Result<f64> {
    pcc(a, b).map(|r| -r)
}

pub fn mse(a: &Raster, b: &Raster) -> Result<f64> {
    a.same_shape(b)?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(s / a.data().len() as f64)
}

/// NPCC plus MSE.
pub fn comloss(a: &Raster, b: &Raster) -> Result<f64> {
    Ok(npcc(a, b)? + mse(a, b)?)
}

/// Mean pairwise PCC across a set of rasters.
///
/// With `max_pairs` set and smaller than the number of unordered pairs, a
/// seeded uniform sample of pairs is averaged instead (an estimator).
pub fn mutual_correlation(patterns: &[Raster], max_pairs: Option<usize>) -> Result<f64> {
    if patterns.len() < 2 {
        return Err(invalid("mutual correlation needs at least two rasters"));
    }
    for p in &patterns[1..] {
        patterns[0].same_shape(p)?;
    }
    let z: Vec<Vec<f64>> = patterns
        .par_iter()
        .enumerate()
        .map(|(index, p)| standardize(p).ok_or(Error::DegenerateMember { index }))
        .collect::<Result<_>>()?;
    let k = z.len();
    let total = k * (k - 1) / 2;

    match max_pairs {
        Some(m) if m < total => {
            if m == 0 {
                return Err(invalid("max_pairs must be positive"));
            }
            let mut g = rng::seeded(PAIR_SUBSAMPLE_SEED);
            let mut picks: Vec<usize> = index::sample(&mut g, total, m).into_vec();
            picks.sort_unstable();
            let partial: Vec<KahanSum> = picks
                .par_chunks(1024)
                .map(|chunk| {
                    let mut acc = KahanSum::default();
                    for &p in chunk {
                        let (i, j) = pair_from_index(p, k);
                        acc.add(dot(&z[i], &z[j]));
                    }
                    acc
                })
                .collect();
            Ok(merge(partial) / m as f64)
        }
        _ => {
            let partial: Vec<KahanSum> = (0..k)
                .into_par_iter()
                .map(|i| {
                    let mut acc = KahanSum::default();
                    for j in i + 1..k {
                        acc.add(dot(&z[i], &z[j]));
                    }
                    acc
                })
                .collect();
            Ok(merge(partial) / total as f64)
        }
    }
}

fn merge(parts: Vec<KahanSum>) -> f64 {
    let mut acc = KahanSum::default();
    for p in parts {
        acc.merge(p);
    }
    acc.value()
}

/// Maps a linear index over the strict upper triangle of a `k x k` matrix to `(i, j)`, `i < j`.
fn pair_from_index(mut p: usize, k: usize) -> (usize, usize) {
    let mut i = 0;
    loop {
        let row = k - 1 - i;
        if p < row {
            return (i, i + 1 + p);
        }
        p -= row;
        i += 1;
    }
}

/// Fraction of reconstructions whose PCC with the target reaches `threshold`.
/// Degenerate rasters count as failures.
pub fn success_rate(reconstructions: &[Raster], targets: &[Raster], threshold: f64) -> Result<f64> {
    if reconstructions.len() != targets.len() {
        return Err(invalid(format!(
            "{} reconstructions vs {} targets",
            reconstructions.len(),
            targets.len()
        )));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(invalid(format!("threshold {threshold} outside (0, 1)")));
    }
    if targets.is_empty() {
        return Err(invalid("no samples"));
    }
    let mut hits = 0usize;
    for (r, t) in reconstructions.iter().zip(targets) {
        match pcc(r, t) {
            Ok(v) if v >= threshold => hits += 1,
            Ok(_) | Err(Error::Degenerate) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(hits as f64 / targets.len() as f64)
}

/// Evaluation summary for one interpolation method at one pitch rung.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub pitch_index: PitchIndex,
    /// Interpolated vs d0 target.
    pub per_sample_pcc: Vec<f64>,
    pub per_sample_mse: Vec<f64>,
    pub mean_pcc: f64,
    pub mean_mse: f64,
    /// Mutual correlation of the network inputs (binned patterns).
    pub cm_before: f64,
    /// Mutual correlation after interpolation.
    pub cm_after: f64,
    /// Reconstruction PCC vs the hidden object, when a reconstruction network was run.
    pub per_sample_recon_pcc: Vec<f64>,
    pub recon_mean_pcc: Option<f64>,
    pub success_rate: Option<f64>,
    /// Number of samples whose PCC was undefined and recorded as zero.
    pub degenerate: usize,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl MetricsReport {
    /// Checks the range invariants of every stored value.
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (-1.0..=1.0).contains(&v);
        if !self.per_sample_pcc.iter().all(|&v| in_unit(v))
            || !self.per_sample_recon_pcc.iter().all(|&v| in_unit(v))
        {
            return Err(invalid("PCC outside [-1, 1]"));
        }
        if self.per_sample_mse.iter().any(|&v| !(v >= 0.0)) {
            return Err(invalid("negative MSE"));
        }
        if let Some(s) = self.success_rate {
            if !(0.0..=1.0).contains(&s) {
                return Err(invalid("success rate outside [0, 1]"));
            }
        }
        Ok(())
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut acc = KahanSum::default();
    values.iter().for_each(|&v| acc.add(v));
    acc.value() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn noise(size: usize, seed: u64) -> Raster {
        let mut g = rng::seeded(seed);
        Raster::from_fn(size, size, |_, _| g.gen::<f32>())
    }

    /// Textbook two-pass PCC used as the reference for the fast path.
    fn pcc_reference(a: &Raster, b: &Raster) -> f64 {
        let n = a.data().len() as f64;
        let ma = a.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let mb = b.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let mut cov = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for (&x, &y) in a.data().iter().zip(b.data()) {
            let (dx, dy) = (x as f64 - ma, y as f64 - mb);
            cov += dx * dy;
            va += dx * dx;
            vb += dy * dy;
        }
        cov / (va * vb).sqrt()
    }

    #[test]
    fn pcc_identities() {
        let x = noise(16, 1);
        assert!((pcc(&x, &x).unwrap() - 1.0).abs() < 1e-9);
        assert!((pcc(&x, &x.map(|v| -v)).unwrap() + 1.0).abs() < 1e-9);
        assert!((pcc(&x, &x.map(|v| 2.5 * v + 3.0)).unwrap() - 1.0).abs() < 1e-9);
        let y = noise(16, 2);
        assert!((pcc(&x, &y).unwrap() - pcc_reference(&x, &y)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_and_shape_errors() {
        let x = noise(8, 1);
        let c = Raster::from_fn(8, 8, |_, _| 1.0);
        assert!(matches!(pcc(&x, &c), Err(Error::Degenerate)));
        assert!(matches!(pcc(&x, &noise(4, 1)), Err(Error::ShapeMismatch { .. })));
        let err = mutual_correlation(&[x.clone(), c, x], None).unwrap_err();
        assert!(matches!(err, Error::DegenerateMember { index: 1 }));
    }

    #[test]
    fn loss_identities() {
        let x = noise(16, 3);
        assert!((npcc(&x, &x).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(mse(&x, &x).unwrap(), 0.0);
        assert!((comloss(&x, &x).unwrap() + 1.0).abs() < 1e-12);
        let z = Raster::zeros(2, 2);
        let o = Raster::from_fn(2, 2, |_, _| 1.0);
        assert_eq!(mse(&z, &o).unwrap(), 1.0);
        let scaled = x.map(|v| 1.7 * v);
        let expected = -1.0 + mse(&x, &scaled).unwrap();
        assert!((comloss(&x, &scaled).unwrap() - expected).abs() < 1e-9);
        assert!(comloss(&x, &scaled).unwrap() > -1.0);
    }

    #[test]
    fn mutual_correlation_small_cases() {
        let x = noise(16, 4);
        let same = vec![x.clone(); 5];
        assert!((mutual_correlation(&same, None).unwrap() - 1.0).abs() < 1e-12);
        let y = noise(16, 5);
        let c = pcc(&x, &y).unwrap();
        assert!((mutual_correlation(&[x.clone(), y], None).unwrap() - c).abs() < 1e-12);
        assert!(mutual_correlation(&[x], None).is_err());
    }

    #[test]
    fn mutual_correlation_matches_double_loop() {
        let xs: Vec<Raster> = (0..12)
            .map(|i| {
                let base = noise(16, 100);
                let n = noise(16, i);
                Raster::from_fn(16, 16, |r, c| base.get(r, c) + 0.7 * n.get(r, c))
            })
            .collect();
        let mut brute = 0.0;
        let mut pairs = 0;
        for i in 0..xs.len() {
            for j in i + 1..xs.len() {
                brute += pcc_reference(&xs[i], &xs[j]);
                pairs += 1;
            }
        }
        brute /= pairs as f64;
        let fast = mutual_correlation(&xs, None).unwrap();
        assert!((fast - brute).abs() < 1e-9);
        // subsample estimator stays close on a homogeneous set
        let est = mutual_correlation(&xs, Some(30)).unwrap();
        assert!((est - brute).abs() < 0.1);
        assert_eq!(est, mutual_correlation(&xs, Some(30)).unwrap());
    }

    #[test]
    fn pair_indexing_covers_triangle() {
        let k = 7;
        let mut seen = Vec::new();
        for p in 0..k * (k - 1) / 2 {
            seen.push(pair_from_index(p, k));
        }
        let mut expected = Vec::new();
        for i in 0..k {
            for j in i + 1..k {
                expected.push((i, j));
            }
        }
        assert_eq!(seen, expected);
    }

    #[test]
    fn success_rate_cases() {
        let xs: Vec<Raster> = (0..20).map(|i| noise(16, i)).collect();
        assert_eq!(success_rate(&xs, &xs, 0.99).unwrap(), 1.0);
        let ys: Vec<Raster> = (100..120).map(|i| noise(16, i)).collect();
        assert!(success_rate(&xs, &ys, 0.5).unwrap() <= 0.05);
        assert!(success_rate(&xs, &xs, 0.0).is_err());
        assert!(success_rate(&xs, &xs, 1.0).is_err());
        let flat = vec![Raster::zeros(16, 16); 20];
        assert_eq!(success_rate(&flat, &xs, 0.5).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn symmetry_and_affine_invariance(s1 in any::<u64>(), s2 in any::<u64>(), a in 0.1f32..10.0, b in -5f32..5.0) {
            let x = noise(8, s1);
            let y = noise(8, s2);
            prop_assert!((npcc(&x, &y).unwrap() - npcc(&y, &x).unwrap()).abs() < 1e-12);
            prop_assert!((mse(&x, &y).unwrap() - mse(&y, &x).unwrap()).abs() < 1e-12);
            let xv: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
            let yv: Vec<f64> = y.data().iter().map(|&v| v as f64).collect();
            let xa: Vec<f64> = xv.iter().map(|v| a as f64 * v + b as f64).collect();
            prop_assert!((pcc_values(&xv, &yv).unwrap() - pcc_values(&xa, &yv).unwrap()).abs() < 1e-9);
            prop_assert!(comloss(&x, &y).unwrap() >= -1.0);
        }
    }
}

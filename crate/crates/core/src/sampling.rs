//! Sampling-regime analysis and pixel binning.
//!
//! The sampling factor `F` is the number of raster cells covered by one
//! speckle grain on average, measured as the area of the half-maximum region of
//! the (mean-subtracted, self-normalized) autocorrelation. From `F` and the
//! pixel pitch follow the mean grain diameter `D` (`π (D/2)² = F p²`), the
//! Nyquist cutoff pitch `d_c = D / 2`, and for each binning factor `n` the
//! sampling pitch `d_s = n p` and relative pitch `d = d_s / d_c`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fft::{fftshift, Fft2};
use crate::optics::SpecklePattern;
use crate::raster::{PitchIndex, Raster};

/// Centered, normalized circular autocorrelation in double precision.
pub fn autocorrelation(raster: &Raster) -> Result<Vec<f64>> {
    let n = raster.side()?;
    if n < 8 {
        return Err(invalid(format!("raster {n}x{n} smaller than 8x8")));
    }
    let mean = raster.mean();
    let mut buf: Vec<Complex64> = raster
        .data()
        .iter()
        .map(|&v| Complex64::new(v as f64 - mean, 0.0))
        .collect();
    Fft2::forward(n).process(&mut buf);
    for z in buf.iter_mut() {
        *z = Complex64::new(z.norm_sqr(), 0.0);
    }
    Fft2::inverse(n).process(&mut buf);
    let zero_lag = buf[0].re;
    // relative floor guards against rounding noise on constant rasters
    let energy: f64 = raster.data().iter().map(|&v| (v as f64).powi(2)).sum();
    if !(zero_lag > 1e-12 * energy.max(f64::MIN_POSITIVE) * (n * n) as f64) {
        return Err(Error::Degenerate);
    }
    let ac: Vec<f64> = buf.iter().map(|z| z.re / zero_lag).collect();
    Ok(fftshift(&ac, n))
}

/// Autocorrelation as a raster, peak (exactly 1) at `(S/2, S/2)`.
pub fn autocorrelate(pattern: &SpecklePattern) -> Result<Raster> {
    let n = pattern.size();
    let ac = autocorrelation(&pattern.intensity)?;
    Raster::new(n, n, ac.into_iter().map(|v| v as f32).collect())
}

/// Number of autocorrelation cells at or above half maximum.
pub fn sampling_factor(raster: &Raster) -> Result<f64> {
    let ac = autocorrelation(raster)?;
    Ok(ac.iter().filter(|&&v| v >= 0.5).count() as f64)
}

/// One rung of the binning ladder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadderRung {
    pub n: usize,
    /// Sampling pitch `n * p` (µm).
    pub ds_um: f64,
    /// Relative pitch `d_s / d_c`.
    pub d: f64,
}

/// Sampling regime of a speckle source and its binning ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    #[serde(rename = "F")]
    pub f: f64,
    pub p_um: f64,
    #[serde(rename = "D_um")]
    pub d_um: f64,
    pub dc_um: f64,
    pub ladder: Vec<LadderRung>,
}

impl SamplingSpec {
    /// Fixed-column text rendering.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "F = {:.3} px   p = {:.3} um   D = {:.3} um   d_c = {:.3} um\n",
            self.f, self.p_um, self.d_um, self.dc_um
        ));
        s.push_str(&format!("{:>5} {:>6} {:>12} {:>10}\n", "rung", "n", "d_s (um)", "d/d_c"));
        for (i, r) in self.ladder.iter().enumerate() {
            let rung = PitchIndex::for_bin_factor(r.n)
                .map(|p| p.to_string())
                .unwrap_or_else(|| format!("#{i}"));
            s.push_str(&format!("{:>5} {:>6} {:>12.3} {:>10.3}\n", rung, r.n, r.ds_um, r.d));
        }
        s
    }
}

pub fn sampling_table(f: f64, p_um: f64, bin_factors: &[usize]) -> Result<SamplingSpec> {
    if !(f > 0.0) || !(p_um > 0.0) {
        return Err(invalid("F and p must be positive"));
    }
    if bin_factors.is_empty() {
        return Err(invalid("bin factor list is empty"));
    }
    if bin_factors.contains(&0) || bin_factors.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("bin factors must be positive and strictly increasing"));
    }
    let d_um = 2.0 * (f * p_um * p_um / PI).sqrt();
    let dc_um = d_um / 2.0;
    let ladder = bin_factors
        .iter()
        .map(|&n| {
            let ds_um = n as f64 * p_um;
            LadderRung {
                n,
                ds_um,
                d: ds_um / dc_um,
            }
        })
        .collect();
    Ok(SamplingSpec {
        f,
        p_um,
        d_um,
        dc_um,
        ladder,
    })
}

/// Block-mean down-sampling of a raster by `n` along both axes.
pub fn bin_raster(x: &Raster, n: usize) -> Result<Raster> {
    if n == 0 {
        return Err(invalid("bin factor must be >= 1"));
    }
    let (h, w) = x.shape();
    if h % n != 0 || w % n != 0 {
        return Err(invalid(format!("bin factor {n} does not divide {h}x{w}")));
    }
    if n == 1 {
        return Ok(x.clone());
    }
    let (oh, ow) = (h / n, w / n);
    let count = (n * n) as f32;
    let src = x.data();
    let mut out = Vec::with_capacity(oh * ow);
    for br in 0..oh {
        for bc in 0..ow {
            let mut acc = 0f32;
            for r in br * n..(br + 1) * n {
                for &v in &src[r * w + bc * n..r * w + (bc + 1) * n] {
                    acc += v;
                }
            }
            out.push(acc / count);
        }
    }
    Raster::new(ow, oh, out)
}

/// Pixel binning with pitch bookkeeping.
pub fn bin(pattern: &SpecklePattern, n: usize) -> Result<SpecklePattern> {
    let intensity = bin_raster(&pattern.intensity, n)?;
    let pitch_index = match (pattern.pitch_index, n.is_power_of_two()) {
        (PitchIndex::Rung(i), true) => PitchIndex::Rung(i + n.trailing_zeros() as u8),
        _ => PitchIndex::Raw,
    };
    Ok(SpecklePattern {
        intensity,
        pixel_pitch_um: pattern.pixel_pitch_um * n as f32,
        pitch_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn pattern(r: Raster) -> SpecklePattern {
        SpecklePattern::new(r, 2.5, PitchIndex::Rung(0)).unwrap()
    }

    fn noise(size: usize, seed: u64) -> Raster {
        let mut g = rng::seeded(seed);
        Raster::from_fn(size, size, |_, _| g.gen::<f32>())
    }

    #[test]
    fn bin_block_means() {
        let x = Raster::from_rows(&[
            [1.0, 2.0, 3.0, 4.0],
            [5.0, 6.0, 7.0, 8.0],
            [9.0, 10.0, 11.0, 12.0],
            [13.0, 14.0, 15.0, 16.0],
        ])
        .unwrap();
        let b = bin_raster(&x, 2).unwrap();
        assert_eq!(b.data(), &[3.5, 5.5, 11.5, 13.5]);
        let p = bin(&pattern(x.clone()), 2).unwrap();
        assert_eq!(p.pixel_pitch_um, 5.0);
        assert_eq!(p.pitch_index, PitchIndex::Rung(1));
        assert_eq!(bin(&pattern(x.clone()), 1).unwrap().intensity, x);
    }

    #[test]
    fn bin_rejects_partial_blocks() {
        assert!(bin_raster(&Raster::zeros(6, 6), 4).is_err());
        assert!(bin_raster(&Raster::zeros(6, 6), 0).is_err());
    }

    #[test]
    fn bin_composes() {
        let x = noise(32, 4);
        let twice = bin_raster(&bin_raster(&x, 2).unwrap(), 2).unwrap();
        let direct = bin_raster(&x, 4).unwrap();
        for (a, b) in twice.data().iter().zip(direct.data()) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-6));
        }
    }

    #[test]
    fn autocorrelation_peak_and_symmetry() {
        let x = noise(32, 1);
        let ac = autocorrelate(&pattern(x)).unwrap();
        assert!((ac.get(16, 16) - 1.0).abs() < 1e-6);
        for r in 1..32 {
            for c in 1..32 {
                let a = ac.get(r, c);
                let b = ac.get(32 - r, 32 - c);
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn white_noise_autocorrelation_is_flat() {
        let x = noise(64, 2);
        let ac = autocorrelate(&pattern(x)).unwrap();
        let bound = 5.0 / ((64 * 64) as f32).sqrt();
        for r in 0..64 {
            for c in 0..64 {
                if (r, c) != (32, 32) {
                    assert!(ac.get(r, c).abs() < bound, "({r},{c}) = {}", ac.get(r, c));
                }
            }
        }
        assert_eq!(sampling_factor(&noise(64, 3)).unwrap(), 1.0);
    }

    #[test]
    fn constant_raster_is_degenerate() {
        let x = Raster::from_fn(16, 16, |_, _| 3.0);
        assert!(matches!(autocorrelate(&pattern(x)), Err(Error::Degenerate)));
        assert!(autocorrelate(&pattern(noise(4, 1))).is_err());
    }

    #[test]
    fn ladder_unit_values() {
        let s = sampling_table(PI, 1.0, &[1]).unwrap();
        assert!((s.d_um - 2.0).abs() < 1e-12);
        assert!((s.dc_um - 1.0).abs() < 1e-12);
        assert!((s.ladder[0].d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ladder_reference_values() {
        let s = sampling_table(17.0, 2.5, &[1, 2, 4, 8, 16, 32, 64, 128]).unwrap();
        assert!((s.d_um - 11.63).abs() < 0.01);
        assert!((s.dc_um - 5.82).abs() < 0.01);
        let expected = [0.43, 0.86, 1.72, 3.44, 6.87, 13.76, 27.49, 54.98];
        for (r, e) in s.ladder.iter().zip(expected) {
            assert!((r.d - e).abs() <= 0.05, "{} vs {e}", r.d);
        }
        let s = sampling_table(17.0, 2.5, &[32]).unwrap();
        assert_eq!(s.ladder[0].ds_um, 80.0);
        assert_eq!(s.ladder[0].ds_um / 2.5, 32.0);
    }

    #[test]
    fn ladder_rejects_bad_input() {
        assert!(sampling_table(0.0, 2.5, &[1]).is_err());
        assert!(sampling_table(17.0, -1.0, &[1]).is_err());
        assert!(sampling_table(17.0, 2.5, &[]).is_err());
        assert!(sampling_table(17.0, 2.5, &[2, 2]).is_err());
    }

    #[test]
    fn table_and_json_keys() {
        let s = sampling_table(17.0, 2.5, &[1, 2]).unwrap();
        assert!(s.to_table().contains("d1"));
        let v = serde_json::to_value(&s).unwrap();
        for k in ["F", "p_um", "D_um", "dc_um", "ladder"] {
            assert!(v.get(k).is_some(), "missing {k}");
        }
    }

    proptest! {
        #[test]
        fn bin_preserves_mean_and_sign(seed in any::<u64>(), k in 0u32..4) {
            let n = 1usize << k;
            let x = noise(32, seed);
            let b = bin_raster(&x, n).unwrap();
            prop_assert!((b.mean() - x.mean()).abs() <= 1e-6 * x.mean().abs());
            prop_assert!(b.data().iter().all(|&v| v >= 0.0));
        }
    }
}

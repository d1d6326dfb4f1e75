//! Polynomial up-sampling baselines.
//!
//! Output cell `j` samples the source at `(j + 0.5) / n - 0.5`, the same
//! block-center geometry as binning, and source indices outside the raster
//! are clamped to the border.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::optics::SpecklePattern;
use crate::raster::{PitchIndex, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterpMethod {
    Nearest,
    Bilinear,
    Bicubic,
}

impl InterpMethod {
    pub const ALL: [InterpMethod; 3] = [Self::Nearest, Self::Bilinear, Self::Bicubic];

    pub fn name(self) -> &'static str {
        match self {
            Self::Nearest => "nearest",
            Self::Bilinear => "bilinear",
            Self::Bicubic => "bicubic",
        }
    }

    fn min_size(self) -> usize {
        match self {
            Self::Nearest | Self::Bilinear => 2,
            Self::Bicubic => 4,
        }
    }
}

impl std::fmt::Display for InterpMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InterpMethod {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(Self::Nearest),
            "bilinear" => Ok(Self::Bilinear),
            "bicubic" => Ok(Self::Bicubic),
            other => Err(invalid(format!("unknown interpolation method {other:?}"))),
        }
    }
}

/// Catmull-Rom kernel (cubic convolution with a = -0.5).
fn cubic_weights(t: f64) -> [f64; 4] {
    const A: f64 = -0.5;
    let w = |x: f64| {
        let x = x.abs();
        if x <= 1.0 {
            (A + 2.0) * x * x * x - (A + 3.0) * x * x + 1.0
        } else if x < 2.0 {
            A * x * x * x - 5.0 * A * x * x + 8.0 * A * x - 4.0 * A
        } else {
            0.0
        }
    };
    [w(t + 1.0), w(t), w(1.0 - t), w(2.0 - t)]
}

/// Per-axis taps: `(source indices, weights)` for every output coordinate.
fn axis_taps(len: usize, n: usize, method: InterpMethod) -> Vec<(Vec<usize>, Vec<f64>)> {
    let last = len as isize - 1;
    let clamp = |i: isize| i.clamp(0, last) as usize;
    (0..len * n)
        .map(|j| {
            let x = (j as f64 + 0.5) / n as f64 - 0.5;
            match method {
                InterpMethod::Nearest => (vec![clamp((x + 0.5).floor() as isize)], vec![1.0]),
                InterpMethod::Bilinear => {
                    let x0 = x.floor();
                    let t = x - x0;
                    let i = x0 as isize;
                    (vec![clamp(i), clamp(i + 1)], vec![1.0 - t, t])
                }
                InterpMethod::Bicubic => {
                    let x0 = x.floor();
                    let i = x0 as isize;
                    let w = cubic_weights(x - x0);
                    ((i - 1..=i + 2).map(clamp).collect(), w.to_vec())
                }
            }
        })
        .collect()
}

/// Up-samples by an integer factor `n` along both axes.
pub fn upsample(x: &Raster, n: usize, method: InterpMethod) -> Result<Raster> {
    if n == 0 {
        return Err(invalid("up-sampling factor must be >= 1"));
    }
    let (h, w) = x.shape();
    let min = method.min_size();
    if h < min || w < min {
        return Err(invalid(format!(
            "{method} needs at least {min}x{min}, got {h}x{w}"
        )));
    }
    if n == 1 {
        return Ok(x.clone());
    }
    let rows = axis_taps(h, n, method);
    let cols = axis_taps(w, n, method);

    // separable: columns first into an (h, w*n) buffer, then rows
    let mut tmp = vec![0f64; h * w * n];
    for r in 0..h {
        let src = &x.data()[r * w..(r + 1) * w];
        for (c, (idx, wt)) in cols.iter().enumerate() {
            tmp[r * w * n + c] = idx.iter().zip(wt).map(|(&i, &k)| src[i] as f64 * k).sum();
        }
    }
    let ow = w * n;
    let mut out = Vec::with_capacity(h * n * ow);
    for (idx, wt) in &rows {
        for c in 0..ow {
            let v: f64 = idx.iter().zip(wt).map(|(&i, &k)| tmp[i * ow + c] * k).sum();
            out.push(v as f32);
        }
    }
    Raster::new(ow, h * n, out)
}

/// Up-samples a binned pattern back to the size of rung `target`.
pub fn upsample_to(
    x: &SpecklePattern,
    target: PitchIndex,
    method: InterpMethod,
) -> Result<SpecklePattern> {
    let (PitchIndex::Rung(src), PitchIndex::Rung(dst)) = (x.pitch_index, target) else {
        return Err(invalid("up-sampling needs ladder pitch indices"));
    };
    if src < dst {
        return Err(invalid(format!(
            "source rung d{src} is finer than target d{dst}"
        )));
    }
    let n = 1usize << (src - dst);
    let intensity = upsample(&x.intensity, n, method)?;
    Ok(SpecklePattern {
        intensity,
        pixel_pitch_um: x.pixel_pitch_um / n as f32,
        pitch_index: target,
    })
}

/// Up-sampling factor between two raster sizes; errors on non-integer ratios.
pub fn size_ratio(from: usize, to: usize) -> Result<usize> {
    if from == 0 || to < from || !to.is_multiple_of(from) {
        return Err(invalid(format!("size ratio {to}/{from} is not an integer >= 1")));
    }
    Ok(to / from)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::sampling::bin_raster;
    use proptest::prelude::*;
    use rand::Rng;

    fn mapped(j: usize, n: usize, len: usize) -> f64 {
        ((j as f64 + 0.5) / n as f64 - 0.5).clamp(0.0, len as f64 - 1.0)
    }

    #[test]
    fn nearest_replicates() {
        let x = Raster::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let y = upsample(&x, 2, InterpMethod::Nearest).unwrap();
        let expected = Raster::from_rows(&[
            [1.0, 1.0, 2.0, 2.0],
            [1.0, 1.0, 2.0, 2.0],
            [3.0, 3.0, 4.0, 4.0],
            [3.0, 3.0, 4.0, 4.0],
        ])
        .unwrap();
        assert_eq!(y, expected);
    }

    #[test]
    fn bilinear_reproduces_planes() {
        let (a, b, c) = (0.3, 1.7, -0.6);
        let plane = |r: f64, col: f64| a + b * r + c * col;
        let x = Raster::from_fn(9, 7, |r, col| plane(r as f64, col as f64) as f32);
        for n in [2, 3, 4, 8] {
            let y = upsample(&x, n, InterpMethod::Bilinear).unwrap();
            for r in 0..y.height() {
                for col in 0..y.width() {
                    let e = plane(mapped(r, n, 7), mapped(col, n, 9));
                    assert!((y.get(r, col) as f64 - e).abs() < 1e-5, "n={n} ({r},{col})");
                }
            }
        }
    }

    #[test]
    fn bicubic_reproduces_quadratics_on_interior() {
        let f = |r: f64, c: f64| 0.5 + 0.1 * r - 0.2 * c + 0.03 * r * r + 0.02 * r * c - 0.04 * c * c;
        let x = Raster::from_fn(12, 12, |r, c| f(r as f64, c as f64) as f32);
        let n = 2;
        let y = upsample(&x, n, InterpMethod::Bicubic).unwrap();
        // interior: all four taps inside the raster
        for r in 4..20 {
            for c in 4..20 {
                let e = f(mapped(r, n, 12), mapped(c, n, 12));
                assert!((y.get(r, c) as f64 - e).abs() < 1e-5, "({r},{c})");
            }
        }
    }

    #[test]
    fn bicubic_cubic_error_is_bounded_not_zero() {
        // Catmull-Rom is exact only up to degree two; record the cubic residual.
        let f = |r: f64| 0.01 * r * r * r;
        let x = Raster::from_fn(12, 12, |r, _| f(r as f64) as f32);
        let y = upsample(&x, 2, InterpMethod::Bicubic).unwrap();
        let mut worst = 0f64;
        for r in 4..20 {
            worst = worst.max((y.get(r, 8) as f64 - f(mapped(r, 2, 12))).abs());
        }
        // residual is 0.01 * 3/32 at t = 1/4 and t = 3/4
        assert!(worst > 1e-4 && worst < 1.5e-3, "worst {worst}");
    }

    #[test]
    fn rejects_small_rasters() {
        let x = Raster::zeros(3, 3);
        assert!(upsample(&x, 2, InterpMethod::Bicubic).is_err());
        assert!(upsample(&x, 2, InterpMethod::Bilinear).is_ok());
        assert!(upsample(&Raster::zeros(1, 1), 2, InterpMethod::Nearest).is_err());
    }

    #[test]
    fn upsample_to_pitch_contract() {
        let mut g = rng::seeded(1);
        let x = Raster::from_fn(8, 8, |_, _| g.gen::<f32>());
        let p = SpecklePattern::new(x.clone(), 80.0, PitchIndex::Rung(5)).unwrap();
        let y = upsample_to(&p, PitchIndex::Rung(0), InterpMethod::Bicubic).unwrap();
        assert_eq!(y.size(), 256);
        assert_eq!(y.pixel_pitch_um, 2.5);
        assert_eq!(y.pitch_index, PitchIndex::Rung(0));
        let same = upsample_to(&p, PitchIndex::Rung(5), InterpMethod::Bilinear).unwrap();
        assert_eq!(same.intensity, x);
        let p3 = SpecklePattern::new(x, 20.0, PitchIndex::Rung(3)).unwrap();
        assert_eq!(upsample_to(&p3, PitchIndex::Rung(0), InterpMethod::Nearest).unwrap().size(), 64);
        assert!(upsample_to(&p3, PitchIndex::Rung(4), InterpMethod::Nearest).is_err());
        assert_eq!(size_ratio(8, 64).unwrap(), 8);
        assert!(size_ratio(8, 60).is_err());
    }

    #[test]
    fn bin_undoes_bilinear_on_ramps() {
        let x = Raster::from_fn(8, 8, |r, c| 1.0 + 0.25 * r as f32 + 0.5 * c as f32);
        for n in [2, 4] {
            let y = bin_raster(&upsample(&x, n, InterpMethod::Bilinear).unwrap(), n).unwrap();
            // border blocks see the clamp; interior blocks are exact
            for r in 1..7 {
                for c in 1..7 {
                    let rel = (y.get(r, c) - x.get(r, c)).abs() / x.get(r, c);
                    assert!(rel < 1e-3);
                }
            }
        }
    }

    #[test]
    fn bicubic_overshoot_is_small() {
        let mut g = rng::seeded(9);
        let x = Raster::from_fn(16, 16, |_, _| g.gen::<f32>());
        let y = upsample(&x, 4, InterpMethod::Bicubic).unwrap();
        let range = x.max() - x.min();
        let over = (y.max() - x.max()).max(x.min() - y.min()).max(0.0);
        // Catmull-Rom's negative lobes bound overshoot well below the input range
        assert!(over < 0.25 * range, "overshoot {over}");
    }

    proptest! {
        #[test]
        fn nearest_multiset_and_convexity(seed in any::<u64>(), n in 1usize..5) {
            let mut g = rng::seeded(seed);
            let x = Raster::from_fn(6, 6, |_, _| g.gen::<f32>());
            let y = upsample(&x, n, InterpMethod::Nearest).unwrap();
            let mut a: Vec<f32> = x.data().iter().flat_map(|&v| std::iter::repeat_n(v, n * n)).collect();
            let mut b = y.data().to_vec();
            a.sort_by(f32::total_cmp);
            b.sort_by(f32::total_cmp);
            prop_assert_eq!(a, b);
            let z = upsample(&x, n, InterpMethod::Bilinear).unwrap();
            prop_assert!(z.min() >= x.min() - 1e-6 && z.max() <= x.max() + 1e-6);
        }
    }
}

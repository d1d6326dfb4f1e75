//! Speckle simulation: phase object, random phase screen, far-field transform.
//!
//! The scattering rig is modelled as a single thin random phase screen placed
//! directly behind the phase object. The combined field is zero padded by
//! `pad_factor` and Fourier transformed; the central `S x S` window of the
//! resulting intensity is the simulated camera frame. Speckle grains in that
//! window are about `pad_factor` cells across, so the pad factor is the one knob
//! that sets the sampling factor.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::fft::{fftshift, Fft2};
use crate::raster::{PitchIndex, Raster};
use crate::rng;
use crate::sampling;

/// Camera pixel pitch attached to freshly simulated frames (µm).
pub const CAMERA_PITCH_UM: f32 = 2.5;

/// Largest phase a gray value can map to: 255 -> 127 -> 127/255 of a full turn.
pub const MAX_OBJECT_PHASE: f64 = 127.0 / 255.0 * TAU;

const CALIBRATION_SEED: u64 = 0x5eed_ca1b;

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height || width == 0 || height == 0 {
            return Err(invalid(format!(
                "gray image data length {} does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }
}

/// Phase raster (radians, within `[0, π]`) displayed on the modulator.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseObject {
    phase: Raster,
    source_label: Option<u8>,
}

impl PhaseObject {
    pub fn new(phase: Raster, source_label: Option<u8>) -> Result<Self> {
        phase.side()?;
        if let Some(v) = phase
            .data()
            .iter()
            .find(|&&v| !(0.0..=PI as f32).contains(&v))
        {
            return Err(invalid(format!("phase {v} outside [0, pi]")));
        }
        Ok(Self {
            phase,
            source_label,
        })
    }

    /// All-zero phase of the given size.
    pub fn flat(size: usize) -> Self {
        Self {
            phase: Raster::zeros(size, size),
            source_label: None,
        }
    }

    pub fn phase(&self) -> &Raster {
        &self.phase
    }

    pub fn size(&self) -> usize {
        self.phase.width()
    }

    pub fn source_label(&self) -> Option<u8> {
        self.source_label
    }

    /// Object rescaled to `[0, 1]` (phase divided by [`MAX_OBJECT_PHASE`]).
    pub fn unit_target(&self) -> Raster {
        let s = (1.0 / MAX_OBJECT_PHASE) as f32;
        self.phase.map(|v| (v * s).min(1.0))
    }
}

/// Maps an 8-bit image to a phase object of `target_size x target_size`.
///
/// Gray values are compressed to half range (`g * 127 / 255`), converted to a
/// phase delay on a `0..2π` scale and replicated by nearest neighbour.
pub fn load_phase_object(
    gray: &GrayImage,
    target_size: usize,
    label: Option<u8>,
) -> Result<PhaseObject> {
    if gray.width != gray.height {
        return Err(Error::NotSquare {
            width: gray.width,
            height: gray.height,
        });
    }
    let src = gray.width;
    if target_size < src {
        return Err(invalid(format!(
            "target size {target_size} smaller than source size {src}"
        )));
    }
    let lut: Vec<f32> = (0..=255u32)
        .map(|g| ((g as f64 * 127.0 / 255.0) / 255.0 * TAU) as f32)
        .collect();
    let phase = Raster::from_fn(target_size, target_size, |r, c| {
        let sr = r * src / target_size;
        let sc = c * src / target_size;
        lut[gray.data[sr * src + sc] as usize]
    });
    PhaseObject::new(phase, label)
}

/// Thin random phase screen standing in for the diffuser.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatteringMedium {
    screen: Raster,
    seed: u64,
}

impl ScatteringMedium {
    pub fn screen(&self) -> &Raster {
        &self.screen
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn size(&self) -> usize {
        self.screen.width()
    }
}

/// Uniform random phases in `[0, 2π)`, reproducible from `seed`.
pub fn make_medium(seed: u64, size: usize) -> Result<ScatteringMedium> {
    if size < 8 {
        return Err(invalid(format!("medium size {size} < 8")));
    }
    let mut rng = rng::seeded(seed);
    let tau = TAU as f32;
    let screen = Raster::from_fn(size, size, |_, _| {
        let v = (rng.gen::<f64>() * TAU) as f32;
        // rounding to f32 can land exactly on 2π
        if v >= tau {
            tau.next_down()
        } else {
            v
        }
    });
    Ok(ScatteringMedium { screen, seed })
}

/// Intensity raster with pixel-pitch metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecklePattern {
    pub intensity: Raster,
    pub pixel_pitch_um: f32,
    pub pitch_index: PitchIndex,
}

impl SpecklePattern {
    pub fn new(intensity: Raster, pixel_pitch_um: f32, pitch_index: PitchIndex) -> Result<Self> {
        intensity.side()?;
        if intensity.data().iter().any(|&v| !(v >= 0.0)) {
            return Err(invalid("speckle intensity must be non-negative"));
        }
        Ok(Self {
            intensity,
            pixel_pitch_um,
            pitch_index,
        })
    }

    pub fn size(&self) -> usize {
        self.intensity.width()
    }

    /// Speckle contrast `σ_I / <I>`.
    pub fn contrast(&self) -> f64 {
        self.intensity.std() / self.intensity.mean()
    }
}

/// Reusable far-field propagator for one `(size, pad_factor)` geometry.
pub struct Propagator {
    size: usize,
    pad_factor: usize,
    fft: Fft2,
    line: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl Propagator {
    pub fn new(size: usize, pad_factor: usize) -> Result<Self> {
        if pad_factor < 2 {
            return Err(invalid(format!("pad factor {pad_factor} < 2")));
        }
        if size == 0 {
            return Err(invalid("size must be positive"));
        }
        let n = size * pad_factor;
        let line = rustfft::FftPlanner::new().plan_fft_forward(n);
        Ok(Self {
            size,
            pad_factor,
            fft: Fft2::forward(n),
            line,
        })
    }

    pub fn padded_size(&self) -> usize {
        self.size * self.pad_factor
    }

    fn aperture_field(&self, object: &PhaseObject, medium: &ScatteringMedium) -> Result<Vec<Complex64>> {
        if object.size() != medium.size() {
            return Err(Error::ShapeMismatch {
                left: object.phase().shape(),
                right: medium.screen().shape(),
            });
        }
        if object.size() != self.size {
            return Err(invalid(format!(
                "propagator built for size {}, got {}",
                self.size,
                object.size()
            )));
        }
        Ok(object
            .phase()
            .data()
            .iter()
            .zip(medium.screen().data())
            .map(|(&a, &b)| Complex64::from_polar(1.0, a as f64 + b as f64))
            .collect())
    }

    /// Full padded far field (unshifted), used for energy bookkeeping.
    pub fn far_field(&self, object: &PhaseObject, medium: &ScatteringMedium) -> Result<FarField> {
        let s = self.size;
        let n = self.padded_size();
        let field = self.aperture_field(object, medium)?;
        let mut buf = vec![Complex64::default(); n * n];
        for r in 0..s {
            buf[r * n..r * n + s].copy_from_slice(&field[r * s..(r + 1) * s]);
        }
        let input_energy = field.iter().map(|z| z.norm_sqr()).sum();
        self.fft.process(&mut buf);
        Ok(FarField {
            n,
            spectrum: buf,
            input_energy,
        })
    }

    /// Central `S x S` window of the far-field intensity, scaled so that the
    /// mean over the whole padded plane is one.
    pub fn propagate(&self, object: &PhaseObject, medium: &ScatteringMedium) -> Result<SpecklePattern> {
        let s = self.size;
        let n = self.padded_size();
        let field = self.aperture_field(object, medium)?;

        // Only the first S rows of the padded plane are non-zero, and only S
        // columns survive the crop, so transform just those.
        let mut rows = vec![Complex64::default(); s * n];
        let mut scratch = vec![Complex64::default(); self.line.get_inplace_scratch_len()];
        for r in 0..s {
            let row = &mut rows[r * n..(r + 1) * n];
            row[..s].copy_from_slice(&field[r * s..(r + 1) * s]);
            self.line.process_with_scratch(row, &mut scratch);
        }
        let lo = n / 2 - s / 2;
        let scale = 1.0 / (s * s) as f64;
        let mut out = vec![0f32; s * s];
        let mut col = vec![Complex64::default(); n];
        for oc in 0..s {
            // fftshift: shifted index k corresponds to frequency (k + n - n/2) % n
            let fc = (lo + oc + n - n / 2) % n;
            col.iter_mut().for_each(|z| *z = Complex64::default());
            for r in 0..s {
                col[r] = rows[r * n + fc];
            }
            self.line.process_with_scratch(&mut col, &mut scratch);
            for or in 0..s {
                let fr = (lo + or + n - n / 2) % n;
                out[or * s + oc] = (col[fr].norm_sqr() * scale) as f32;
            }
        }
        SpecklePattern::new(Raster::new(s, s, out)?, CAMERA_PITCH_UM, PitchIndex::Rung(0))
    }
}

/// Unshifted spectrum of the padded aperture field.
pub struct FarField {
    pub n: usize,
    pub spectrum: Vec<Complex64>,
    /// `Σ |field|²` over the aperture, before the transform.
    pub input_energy: f64,
}

impl FarField {
    /// `Σ |FFT|² / N` over the full padded plane (`N` = cell count).
    pub fn output_energy(&self) -> f64 {
        self.spectrum.iter().map(|z| z.norm_sqr()).sum::<f64>() / (self.n * self.n) as f64
    }

    /// Central `size x size` crop with the same scaling as [`Propagator::propagate`].
    pub fn central_intensity(&self, size: usize) -> Raster {
        let n = self.n;
        let shifted = fftshift(&self.spectrum, n);
        let lo = n / 2 - size / 2;
        let scale = 1.0 / (size * size) as f64;
        Raster::from_fn(size, size, |r, c| {
            (shifted[(lo + r) * n + lo + c].norm_sqr() * scale) as f32
        })
    }
}

/// One-shot propagation; see [`Propagator`] for repeated use.
pub fn propagate(
    object: &PhaseObject,
    medium: &ScatteringMedium,
    pad_factor: usize,
) -> Result<SpecklePattern> {
    Propagator::new(object.size(), pad_factor)?.propagate(object, medium)
}

/// Result of a pad-factor search.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub pad_factor: usize,
    pub measured_f: f64,
    /// `(pad_factor, mean measured F)` for every factor evaluated.
    pub table: Vec<(usize, f64)>,
}

pub const PAD_SEARCH: std::ops::RangeInclusive<usize> = 2..=16;

/// Mean sampling factor of flat-object speckle over `trials` random media.
pub fn mean_sampling_factor(size: usize, pad_factor: usize, trials: usize, seed: u64) -> Result<f64> {
    let prop = Propagator::new(size, pad_factor)?;
    let object = PhaseObject::flat(size);
    let fs = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let medium = make_medium(seed.wrapping_add(t), size)?;
            let pattern = prop.propagate(&object, &medium)?;
            sampling::sampling_factor(&pattern.intensity)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(fs.iter().sum::<f64>() / fs.len() as f64)
}

/// Finds the pad factor whose mean measured sampling factor is closest to
/// `target_f`; fails if the best is off by more than 20 %.
pub fn calibrate_pad_factor(target_f: f64, size: usize, trials: usize) -> Result<Calibration> {
    if !(target_f > 1.0) {
        return Err(invalid(format!("target F {target_f} must exceed 1")));
    }
    if trials < 8 {
        return Err(invalid(format!("need at least 8 trials, got {trials}")));
    }
    let mut table = Vec::new();
    for pad in PAD_SEARCH {
        let f = mean_sampling_factor(size, pad, trials, CALIBRATION_SEED)?;
        table.push((pad, f));
        // F grows with the pad factor; nothing past the first overshoot can be closer.
        if f >= target_f {
            break;
        }
    }
    let &(pad_factor, measured_f) = table
        .iter()
        .min_by(|a, b| (a.1 - target_f).abs().total_cmp(&(b.1 - target_f).abs()))
        .expect("search range is non-empty");
    if (measured_f - target_f).abs() > 0.2 * target_f {
        return Err(Error::Calibration {
            target: target_f,
            table,
        });
    }
    Ok(Calibration {
        pad_factor,
        measured_f,
        table,
    })
}

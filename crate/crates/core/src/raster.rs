use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Row-major 2-D raster of `f32` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Raster {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid("raster dimensions must be positive"));
        }
        if data.len() != width * height {
            return Err(invalid(format!(
                "raster data length {} does not match {}x{}",
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

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    /// Builds a raster from nested rows. All rows must have equal length.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(width * height);
        for row in rows {
            let row = row.as_ref();
            if row.len() != width {
                return Err(invalid("ragged rows"));
            }
            data.extend_from_slice(row);
        }
        Self::new(width, height, data)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn is_square(&self) -> bool {
        self.width == self.height
    }

    /// Side length of a square raster.
    pub fn side(&self) -> Result<usize> {
        if self.is_square() {
            Ok(self.width)
        } else {
            Err(Error::NotSquare {
                width: self.width,
                height: self.height,
            })
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        self.data[row * self.width + col] = value;
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        let m = self.mean();
        let var = self
            .data
            .iter()
            .map(|&v| {
                let d = v as f64 - m;
                d * d
            })
            .sum::<f64>()
            / self.data.len() as f64;
        var.sqrt()
    }

    pub fn min(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    /// Divides every sample by the raster mean. A zero-mean raster is returned unchanged.
    pub fn normalized_by_mean(&self) -> Self {
        let m = self.mean();
        if m == 0.0 {
            return self.clone();
        }
        let inv = (1.0 / m) as f32;
        self.map(|v| v * inv)
    }

    pub(crate) fn same_shape(&self, other: &Raster) -> Result<()> {
        if self.shape() == other.shape() {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                left: self.shape(),
                right: other.shape(),
            })
        }
    }
}

/// Which rung of the binning ladder a raster represents.
///
/// `Rung(i)` is the pattern binned by `2^i`; `Raw` marks rasters that did not
/// come out of the ladder. Stored as `-1` for `Raw` in the binary formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PitchIndex {
    Raw,
    Rung(u8),
}

impl PitchIndex {
    pub fn to_i32(self) -> i32 {
        match self {
            PitchIndex::Raw => -1,
            PitchIndex::Rung(i) => i as i32,
        }
    }

    pub fn from_i32(v: i32) -> Result<Self> {
        match v {
            -1 => Ok(PitchIndex::Raw),
            0..=31 => Ok(PitchIndex::Rung(v as u8)),
            _ => Err(invalid(format!("pitch index {v} out of range"))),
        }
    }

    /// Rung index for a power-of-two bin factor `n`.
    pub fn for_bin_factor(n: usize) -> Option<Self> {
        if n.is_power_of_two() {
            Some(PitchIndex::Rung(n.trailing_zeros() as u8))
        } else {
            None
        }
    }

    /// Linear bin factor relative to the d0 rung.
    pub fn bin_factor(self) -> Option<usize> {
        match self {
            PitchIndex::Raw => None,
            PitchIndex::Rung(i) => Some(1usize << i),
        }
    }
}

impl std::fmt::Display for PitchIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PitchIndex::Raw => write!(f, "raw"),
            PitchIndex::Rung(i) => write!(f, "d{i}"),
        }
    }
}

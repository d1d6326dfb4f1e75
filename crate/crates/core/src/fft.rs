//! Square 2-D FFT helpers on row-major complex buffers.

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};
use std::sync::Arc;

pub struct Fft2 {
    n: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(n: usize, direction: FftDirection) -> Self {
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft(n, direction);
        Self { n, fft }
    }

    pub fn forward(n: usize) -> Self {
        Self::new(n, FftDirection::Forward)
    }

    pub fn inverse(n: usize) -> Self {
        Self::new(n, FftDirection::Inverse)
    }

    /// Unnormalized in-place transform of an `n x n` buffer.
    pub fn process(&self, buf: &mut [Complex64]) {
        let n = self.n;
        assert_eq!(buf.len(), n * n);
        let mut scratch = vec![Complex64::default(); self.fft.get_inplace_scratch_len()];
        for row in buf.chunks_exact_mut(n) {
            self.fft.process_with_scratch(row, &mut scratch);
        }
        let mut col = vec![Complex64::default(); n];
        for c in 0..n {
            for r in 0..n {
                col[r] = buf[r * n + c];
            }
            self.fft.process_with_scratch(&mut col, &mut scratch);
            for r in 0..n {
                buf[r * n + c] = col[r];
            }
        }
    }
}

/// Rolls an `n x n` buffer so that index 0 moves to the center (`n / 2`).
pub fn fftshift<T: Copy>(buf: &[T], n: usize) -> Vec<T> {
    let h = n / 2;
    let mut out = Vec::with_capacity(n * n);
    for r in 0..n {
        let sr = (r + n - h) % n;
        for c in 0..n {
            let sc = (c + n - h) % n;
            out.push(buf[sr * n + sc]);
        }
    }
    out
}

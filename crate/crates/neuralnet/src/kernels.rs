//! Forward and backward kernels on raw NCHW buffers.
//!
//! Backward kernels accumulate (`+=`) into the gradient buffers they are
//! handed; callers zero them once.

use crate::scalar::Scalar;

// --- convolution (stride 1, zero "same" padding, odd square kernel) ----------

fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, k: usize, cols: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * hw;
                let dst = &mut cols[row..row + hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for oy in 0..h {
                    let iy = oy as isize + dy;
                    let out = &mut dst[oy * w..(oy + 1) * w];
                    if iy < 0 || iy >= h as isize {
                        out.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = ox as isize + dx;
                        *o = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, k: usize, dx: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * hw;
                let src = &cols[row..row + hw];
                let dy = ky as isize - pad;
                let ddx = kx as isize - pad;
                for oy in 0..h {
                    let iy = oy as isize + dy;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..w {
                        let ix = ox as isize + ddx;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += src[oy * w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Geometry of a convolution call.
#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl ConvDims {
    fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }
}

pub fn conv2d_forward<T: Scalar>(d: ConvDims, x: &[T], weight: &[T], bias: &[T], out: &mut [T]) {
    let hw = d.h * d.w;
    let rows = d.col_rows();
    let mut cols = if d.k == 1 { Vec::new() } else { vec![T::zero(); rows * hw] };
    for b in 0..d.batch {
        let xb = &x[b * d.cin * hw..(b + 1) * d.cin * hw];
        let ob = &mut out[b * d.cout * hw..(b + 1) * d.cout * hw];
        for (co, plane) in ob.chunks_exact_mut(hw).enumerate() {
            plane.iter_mut().for_each(|v| *v = bias[co]);
        }
        let src: &[T] = if d.k == 1 {
            xb
        } else {
            im2col(xb, d.cin, d.h, d.w, d.k, &mut cols);
            &cols
        };
        T::gemm(d.cout, rows, hw, T::one(), weight, false, src, false, T::one(), ob);
    }
}

pub fn conv2d_backward<T: Scalar>(
    d: ConvDims,
    x: &[T],
    weight: &[T],
    grad_out: &[T],
    grad_x: Option<&mut [T]>,
    grad_w: &mut [T],
    grad_b: &mut [T],
) {
    let hw = d.h * d.w;
    let rows = d.col_rows();
    let mut cols = if d.k == 1 { Vec::new() } else { vec![T::zero(); rows * hw] };
    let mut dcols = vec![T::zero(); rows * hw];
    let mut grad_x = grad_x;
    for b in 0..d.batch {
        let xb = &x[b * d.cin * hw..(b + 1) * d.cin * hw];
        let gb = &grad_out[b * d.cout * hw..(b + 1) * d.cout * hw];
        for (co, plane) in gb.chunks_exact(hw).enumerate() {
            grad_b[co] += plane.iter().copied().sum::<T>();
        }
        let src: &[T] = if d.k == 1 {
            xb
        } else {
            im2col(xb, d.cin, d.h, d.w, d.k, &mut cols);
            &cols
        };
        T::gemm(d.cout, hw, rows, T::one(), gb, false, src, true, T::one(), grad_w);
        if let Some(gx) = grad_x.as_deref_mut() {
            let gxb = &mut gx[b * d.cin * hw..(b + 1) * d.cin * hw];
            if d.k == 1 {
                T::gemm(rows, d.cout, hw, T::one(), weight, true, gb, false, T::one(), gxb);
            } else {
                T::gemm(rows, d.cout, hw, T::one(), weight, true, gb, false, T::zero(), &mut dcols);
                col2im(&dcols, d.cin, d.h, d.w, d.k, gxb);
            }
        }
    }
}

// --- average pooling ----------------------------------------------------------

/// Window-`n`, stride-`n` average pooling. Sums each block row by row and
/// divides by `n * n`, the same arithmetic as pixel binning.
pub fn avg_pool_forward<T: Scalar>(planes: usize, h: usize, w: usize, n: usize, x: &[T], out: &mut [T]) {
    let (oh, ow) = (h / n, w / n);
    let count = T::from_usize(n * n).unwrap();
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for by in 0..oh {
            for bx in 0..ow {
                let mut acc = T::zero();
                for r in by * n..(by + 1) * n {
                    for &v in &src[r * w + bx * n..r * w + (bx + 1) * n] {
                        acc += v;
                    }
                }
                dst[by * ow + bx] = acc / count;
            }
        }
    }
}

pub fn avg_pool_backward<T: Scalar>(planes: usize, h: usize, w: usize, n: usize, grad_out: &[T], grad_x: &mut [T]) {
    let (oh, ow) = (h / n, w / n);
    let inv = T::one() / T::from_usize(n * n).unwrap();
    for p in 0..planes {
        let g = &grad_out[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut grad_x[p * h * w..(p + 1) * h * w];
        for r in 0..h {
            for c in 0..w {
                dst[r * w + c] += g[(r / n) * ow + c / n] * inv;
            }
        }
    }
}

// --- bilinear 2x up-sampling (half-pixel centers, clamped border) -------------

/// Taps for output index `j` of a 2x up-sampled axis of length `len`.
fn up2_taps(j: usize, len: usize) -> [(usize, f64); 2] {
    let i = j / 2;
    let last = len - 1;
    if j.is_multiple_of(2) {
        [(i.saturating_sub(1), 0.25), (i, 0.75)]
    } else {
        [(i, 0.75), ((i + 1).min(last), 0.25)]
    }
}

pub fn upsample2x_forward<T: Scalar>(planes: usize, h: usize, w: usize, x: &[T], out: &mut [T]) {
    let (oh, ow) = (2 * h, 2 * w);
    let col_taps: Vec<_> = (0..ow).map(|j| up2_taps(j, w)).collect();
    let mut tmp = vec![T::zero(); h * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        for r in 0..h {
            for (c, taps) in col_taps.iter().enumerate() {
                let mut acc = T::zero();
                for &(i, wt) in taps {
                    acc += src[r * w + i] * T::from_f64_lossy(wt);
                }
                tmp[r * ow + c] = acc;
            }
        }
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for r in 0..oh {
            let taps = up2_taps(r, h);
            for c in 0..ow {
                let mut acc = T::zero();
                for &(i, wt) in &taps {
                    acc += tmp[i * ow + c] * T::from_f64_lossy(wt);
                }
                dst[r * ow + c] = acc;
            }
        }
    }
}

pub fn upsample2x_backward<T: Scalar>(planes: usize, h: usize, w: usize, grad_out: &[T], grad_x: &mut [T]) {
    let (oh, ow) = (2 * h, 2 * w);
    let mut tmp = vec![T::zero(); h * ow];
    for p in 0..planes {
        let g = &grad_out[p * oh * ow..(p + 1) * oh * ow];
        tmp.iter_mut().for_each(|v| *v = T::zero());
        for r in 0..oh {
            for &(i, wt) in &up2_taps(r, h) {
                let wt = T::from_f64_lossy(wt);
                for c in 0..ow {
                    tmp[i * ow + c] += g[r * ow + c] * wt;
                }
            }
        }
        let dst = &mut grad_x[p * h * w..(p + 1) * h * w];
        for r in 0..h {
            for c in 0..ow {
                for &(i, wt) in &up2_taps(c, w) {
                    dst[r * w + i] += tmp[r * ow + c] * T::from_f64_lossy(wt);
                }
            }
        }
    }
}

// --- transposed convolution, kernel 2, stride 2 -------------------------------

/// Weight layout `[cin, cout, 2, 2]`, bias `[cout]`.
pub fn tconv2x_forward<T: Scalar>(
    batch: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    x: &[T],
    weight: &[T],
    bias: &[T],
    out: &mut [T],
) {
    let hw = h * w;
    let (oh, ow) = (2 * h, 2 * w);
    let mut y = vec![T::zero(); cout * 4 * hw];
    for b in 0..batch {
        let xb = &x[b * cin * hw..(b + 1) * cin * hw];
        T::gemm(cout * 4, cin, hw, T::one(), weight, true, xb, false, T::zero(), &mut y);
        let ob = &mut out[b * cout * oh * ow..(b + 1) * cout * oh * ow];
        for co in 0..cout {
            for d in 0..4 {
                let (di, dj) = (d / 2, d % 2);
                let src = &y[(co * 4 + d) * hw..(co * 4 + d + 1) * hw];
                for i in 0..h {
                    for j in 0..w {
                        ob[co * oh * ow + (2 * i + di) * ow + 2 * j + dj] = src[i * w + j] + bias[co];
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn tconv2x_backward<T: Scalar>(
    batch: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    x: &[T],
    weight: &[T],
    grad_out: &[T],
    grad_x: Option<&mut [T]>,
    grad_w: &mut [T],
    grad_b: &mut [T],
) {
    let hw = h * w;
    let (oh, ow) = (2 * h, 2 * w);
    let mut dy = vec![T::zero(); cout * 4 * hw];
    let mut grad_x = grad_x;
    for b in 0..batch {
        let gb = &grad_out[b * cout * oh * ow..(b + 1) * cout * oh * ow];
        for co in 0..cout {
            let plane = &gb[co * oh * ow..(co + 1) * oh * ow];
            grad_b[co] += plane.iter().copied().sum::<T>();
            for d in 0..4 {
                let (di, dj) = (d / 2, d % 2);
                let dst = &mut dy[(co * 4 + d) * hw..(co * 4 + d + 1) * hw];
                for i in 0..h {
                    for j in 0..w {
                        dst[i * w + j] = plane[(2 * i + di) * ow + 2 * j + dj];
                    }
                }
            }
        }
        let xb = &x[b * cin * hw..(b + 1) * cin * hw];
        T::gemm(cin, hw, cout * 4, T::one(), xb, false, &dy, true, T::one(), grad_w);
        if let Some(gx) = grad_x.as_deref_mut() {
            let gxb = &mut gx[b * cin * hw..(b + 1) * cin * hw];
            T::gemm(cin, cout * 4, hw, T::one(), weight, false, &dy, false, T::one(), gxb);
        }
    }
}

// --- fully connected ------------------------------------------------------------

/// `out[b] = weight * x[b] + bias`, weight `[fout, fin]`.
pub fn linear_forward<T: Scalar>(batch: usize, fin: usize, fout: usize, x: &[T], weight: &[T], bias: &[T], out: &mut [T]) {
    for row in out.chunks_exact_mut(fout) {
        row.copy_from_slice(bias);
    }
    T::gemm(batch, fin, fout, T::one(), x, false, weight, true, T::one(), out);
}

#[allow(clippy::too_many_arguments)]
pub fn linear_backward<T: Scalar>(
    batch: usize,
    fin: usize,
    fout: usize,
    x: &[T],
    weight: &[T],
    grad_out: &[T],
    grad_x: Option<&mut [T]>,
    grad_w: &mut [T],
    grad_b: &mut [T],
) {
    for row in grad_out.chunks_exact(fout) {
        for (gb, &g) in grad_b.iter_mut().zip(row) {
            *gb += g;
        }
    }
    T::gemm(fout, batch, fin, T::one(), grad_out, true, x, false, T::one(), grad_w);
    if let Some(gx) = grad_x {
        T::gemm(batch, fout, fin, T::one(), grad_out, false, weight, false, T::one(), gx);
    }
}

// --- per-sample correlation losses ----------------------------------------------

/// Per-sample statistics used by the correlation losses.
#[derive(Debug, Clone, Copy)]
pub struct PairStats {
    pub mean_p: f64,
    pub mean_t: f64,
    pub cov: f64,
    pub std_p: f64,
    pub std_t: f64,
}

pub fn pair_stats<T: Scalar>(pred: &[T], target: &[T]) -> PairStats {
    let m = pred.len() as f64;
    let mean_p = pred.iter().map(|v| v.as_f64()).sum::<f64>() / m;
    let mean_t = target.iter().map(|v| v.as_f64()).sum::<f64>() / m;
    let (mut cov, mut vp, mut vt) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(target) {
        let a = p.as_f64() - mean_p;
        let c = t.as_f64() - mean_t;
        cov += a * c;
        vp += a * a;
        vt += c * c;
    }
    PairStats {
        mean_p,
        mean_t,
        cov: cov / m,
        std_p: (vp / m).sqrt(),
        std_t: (vt / m).sqrt(),
    }
}

/// NPCC of one sample and (optionally) its gradient w.r.t. the prediction,
/// scaled by `scale`. `eps` is added to the prediction's standard deviation.
pub fn npcc_sample<T: Scalar>(pred: &[T], target: &[T], eps: f64, scale: f64, grad: Option<&mut [T]>) -> Option<f64> {
    let s = pair_stats(pred, target);
    let sp = s.std_p + eps;
    if !(s.std_t > 0.0) || !(sp > 0.0) {
        return None;
    }
    let value = -s.cov / (sp * s.std_t);
    if let Some(g) = grad {
        let m = pred.len() as f64;
        // d/dp_j of -cov/(sp st) = -(c_j / (sp st) - cov a_j / (sp^2 st std_p)) / m
        let coef_c = -1.0 / (m * sp * s.std_t);
        let coef_a = if s.std_p > 0.0 {
            s.cov / (m * sp * sp * s.std_t * s.std_p)
        } else {
            0.0
        };
        for ((gj, p), t) in g.iter_mut().zip(pred).zip(target) {
            let a = p.as_f64() - s.mean_p;
            let c = t.as_f64() - s.mean_t;
            *gj += T::from_f64_lossy(scale * (coef_c * c + coef_a * a));
        }
    }
    Some(value)
}

/// Mean squared error of one sample and its scaled gradient.
pub fn mse_sample<T: Scalar>(pred: &[T], target: &[T], scale: f64, grad: Option<&mut [T]>) -> f64 {
    let m = pred.len() as f64;
    let value = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p.as_f64() - t.as_f64();
            d * d
        })
        .sum::<f64>()
        / m;
    if let Some(g) = grad {
        for ((gj, p), t) in g.iter_mut().zip(pred).zip(target) {
            *gj += T::from_f64_lossy(scale * 2.0 * (p.as_f64() - t.as_f64()) / m);
        }
    }
    value
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_identity_kernel() {
        let d = ConvDims {
            batch: 1,
            cin: 1,
            cout: 1,
            h: 3,
            w: 3,
            k: 3,
        };
        let x: Vec<f64> = (0..9).map(|v| v as f64).collect();
        let mut wgt = vec![0.0; 9];
        wgt[4] = 1.0;
        let mut out = vec![0.0; 9];
        conv2d_forward(d, &x, &wgt, &[0.5], &mut out);
        let expected: Vec<f64> = x.iter().map(|v| v + 0.5).collect();
        assert_eq!(out, expected);
    }

    #[test]
    fn conv_shift_kernel_pads_with_zero() {
        let d = ConvDims {
            batch: 1,
            cin: 1,
            cout: 1,
            h: 2,
            w: 2,
            k: 3,
        };
        // picks the right-hand neighbour
        let mut wgt = vec![0.0; 9];
        wgt[5] = 1.0;
        let mut out = vec![0.0; 4];
        conv2d_forward(d, &[1.0, 2.0, 3.0, 4.0], &wgt, &[0.0], &mut out);
        assert_eq!(out, vec![2.0, 0.0, 4.0, 0.0]);
    }

    #[test]
    fn pool_block_means() {
        let x: Vec<f32> = (1..=16).map(|v| v as f32).collect();
        let mut out = vec![0.0; 4];
        avg_pool_forward(1, 4, 4, 2, &x, &mut out);
        assert_eq!(out, vec![3.5, 5.5, 11.5, 13.5]);
    }

    #[test]
    fn tconv_places_kernel() {
        // one input pixel, kernel [1 2; 3 4]
        let mut out = vec![0.0; 4];
        tconv2x_forward(1, 1, 1, 1, 1, &[2.0f64], &[1.0, 2.0, 3.0, 4.0], &[0.0], &mut out);
        assert_eq!(out, vec![2.0, 4.0, 6.0, 8.0]);
    }
}

//! Synthetic handwritten-style digits.
//!
//! Each digit is a set of polylines in the unit square. A sample applies a
//! random rotation, scale, shear and shift, then rasterizes the strokes with
//! an anti-aliased pen of random width. Used when no IDX image file is
//! available.

use std::f64::consts::PI;

use rand::Rng;
use speckle_core::optics::GrayImage;

pub const GLYPH_SIZE: usize = 28;

type Pt = (f64, f64);

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, a0: f64, a1: f64, n: usize) -> Vec<Pt> {
    (0..n)
        .map(|i| {
            let t = (a0 + (a1 - a0) * i as f64 / (n - 1) as f64) * PI / 180.0;
            (cx + rx * t.cos(), cy + ry * t.sin())
        })
        .collect()
}

fn chain(mut a: Vec<Pt>, b: &[Pt]) -> Vec<Pt> {
    a.extend_from_slice(b);
    a
}

/// Stroke skeleton of `digit` (x right, y down).
pub fn strokes(digit: u8) -> Vec<Vec<Pt>> {
    match digit % 10 {
        0 => vec![arc(0.5, 0.5, 0.28, 0.4, 0.0, 360.0, 24)],
        1 => vec![vec![(0.35, 0.25), (0.55, 0.1), (0.55, 0.9)]],
        2 => vec![chain(arc(0.5, 0.32, 0.26, 0.22, 200.0, 360.0, 10), &[(0.74, 0.4), (0.25, 0.9), (0.78, 0.9)])],
        3 => vec![
            arc(0.5, 0.3, 0.24, 0.2, 200.0, 450.0, 12),
            arc(0.5, 0.7, 0.27, 0.2, -90.0, 160.0, 12),
        ],
        4 => vec![vec![(0.65, 0.9), (0.65, 0.1), (0.2, 0.65), (0.8, 0.65)]],
        5 => vec![chain(
            vec![(0.75, 0.1), (0.3, 0.1), (0.27, 0.45)],
            &arc(0.5, 0.65, 0.27, 0.25, -130.0, 160.0, 14),
        )],
        6 => vec![chain(vec![(0.65, 0.1), (0.3, 0.5)], &arc(0.5, 0.68, 0.24, 0.22, 190.0, 550.0, 20))],
        7 => vec![vec![(0.22, 0.1), (0.78, 0.1), (0.4, 0.9)]],
        8 => vec![
            arc(0.5, 0.3, 0.22, 0.2, 0.0, 360.0, 18),
            arc(0.5, 0.7, 0.26, 0.2, 0.0, 360.0, 18),
        ],
        _ => vec![chain(arc(0.5, 0.32, 0.24, 0.22, 0.0, 360.0, 18), &[(0.74, 0.32), (0.6, 0.9)])],
    }
}

fn seg_dist(p: Pt, a: Pt, b: Pt) -> f64 {
    let (abx, aby) = (b.0 - a.0, b.1 - a.1);
    let len2 = (abx * abx + aby * aby).max(1e-12);
    let t = (((p.0 - a.0) * abx + (p.1 - a.1) * aby) / len2).clamp(0.0, 1.0);
    let (qx, qy) = (a.0 + t * abx, a.1 + t * aby);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

/// Renders one randomized instance of `digit` at `size x size`.
pub fn render(digit: u8, rng: &mut impl Rng, size: usize) -> GrayImage {
    let angle: f64 = rng.gen_range(-0.25..0.25);
    let scale: f64 = rng.gen_range(0.8..1.05);
    let shear: f64 = rng.gen_range(-0.25..0.25);
    let tx: f64 = rng.gen_range(-0.08..0.08);
    let ty: f64 = rng.gen_range(-0.08..0.08);
    let pen: f64 = rng.gen_range(0.035..0.055);

    // A = scale * R(angle) * [[1, shear], [0, 1]]
    let (c, s) = (angle.cos(), angle.sin());
    let a = [scale * c, scale * (c * shear - s), scale * s, scale * (s * shear + c)];
    let map = |(x, y): Pt| {
        let (x, y) = (x - 0.5, y - 0.5);
        (a[0] * x + a[1] * y + 0.5 + tx, a[2] * x + a[3] * y + 0.5 + ty)
    };
    let segments: Vec<(Pt, Pt)> = strokes(digit)
        .into_iter()
        .flat_map(|stroke| {
            let pts: Vec<Pt> = stroke.into_iter().map(map).collect();
            pts.windows(2).map(|w| (w[0], w[1])).collect::<Vec<_>>()
        })
        .collect();

    let soft = 1.5 / size as f64;
    let mut data = Vec::with_capacity(size * size);
    for r in 0..size {
        for col in 0..size {
            let p = ((col as f64 + 0.5) / size as f64, (r as f64 + 0.5) / size as f64);
            let d = segments.iter().map(|&(a, b)| seg_dist(p, a, b)).fold(f64::INFINITY, f64::min);
            let v = ((pen - d) / soft + 0.5).clamp(0.0, 1.0);
            data.push((v * 255.0).round() as u8);
        }
    }
    GrayImage::new(size, size, data).expect("square")
}

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use speckle_core::metrics::MetricsReport;
use speckle_core::{PitchIndex, Raster};

use crate::error::{file_err, io_err, PipelineError, Result};
use crate::evaluate::Example;

const CELL: usize = 30;
const GAP: usize = 2;

fn cell(r: &MetricsReport) -> String {
    let mut s = format!("{:.3}/{:.3}/{:.3}", r.mean_pcc, r.mean_mse, r.cm_after);
    if let Some(sr) = r.success_rate {
        s.push_str(&format!("/{:.2}", sr));
    }
    s
}

/// Fixed-width table: one row per rung, one column per method. Cells read
/// `PCC/MSE/Cm/success`; the `Cm in` column is the mutual correlation of
/// the binned inputs.
pub fn render_table(reports: &[MetricsReport]) -> Result<String> {
    if reports.is_empty() {
        return Err(PipelineError::Config("no reports to render".into()));
    }
    let mut methods: Vec<&str> = Vec::new();
    for r in reports {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let rungs: BTreeSet<PitchIndex> = reports.iter().map(|r| r.pitch_index).collect();
    let mut out = format!("{:<6}{:>8}", "rung", "Cm in");
    for m in &methods {
        out.push_str(&format!("  {:<CELL$}", m));
    }
    out.push('\n');
    for rung in rungs {
        let row: Vec<&MetricsReport> = reports.iter().filter(|r| r.pitch_index == rung).collect();
        out.push_str(&format!("{:<6}{:>8.3}", rung.to_string(), row[0].cm_before));
        for m in &methods {
            let c = row.iter().find(|r| r.method == *m).map(|r| cell(r)).unwrap_or_else(|| "-".into());
            out.push_str(&format!("  {:<CELL$}", c));
        }
        out.push('\n');
    }
    let notes: BTreeSet<String> = reports.iter().flat_map(|r| r.notes.iter().cloned()).collect();
    for n in notes {
        out.push_str(&format!("note: {n}\n"));
    }
    Ok(out)
}

pub fn to_json(reports: &[MetricsReport]) -> Result<String> {
    Ok(serde_json::to_string_pretty(reports)?)
}

pub fn from_json(s: &str) -> Result<Vec<MetricsReport>> {
    Ok(serde_json::from_str(s)?)
}

/// Binary 16-bit PGM of panels placed side by side, each min-max scaled.
pub fn pgm_bytes(panels: &[Raster]) -> Result<Vec<u8>> {
    let height = panels.iter().map(Raster::height).max().ok_or_else(|| PipelineError::Config("no panels".into()))?;
    let width: usize = panels.iter().map(Raster::width).sum::<usize>() + GAP * (panels.len() - 1);
    let mut pixels = vec![0u16; width * height];
    let mut x0 = 0;
    for p in panels {
        let (lo, hi) = (p.min(), p.max());
        let span = if hi > lo { hi - lo } else { 1.0 };
        for r in 0..p.height() {
            for c in 0..p.width() {
                let v = ((p.get(r, c) - lo) / span).clamp(0.0, 1.0);
                pixels[r * width + x0 + c] = (v * 65535.0).round() as u16;
            }
        }
        x0 += p.width() + GAP;
    }
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for v in pixels {
        out.extend_from_slice(&v.to_be_bytes());
    }
    Ok(out)
}

/// Writes `report.txt`, `report.json` and one PGM per example into `dir`.
pub fn write_report(dir: &Path, reports: &[MetricsReport], examples: &[Example]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = vec![];
    let mut put = |name: String, bytes: &[u8]| -> Result<()> {
        let path = dir.join(name);
        speckle_core::io::write_atomic(&path, bytes).map_err(file_err(&path))?;
        written.push(path);
        Ok(())
    };
    put("report.txt".into(), render_table(reports)?.as_bytes())?;
    put("report.json".into(), to_json(reports)?.as_bytes())?;
    for ex in examples {
        let stem = ex.label.replace('(', "-").replace(')', "");
        put(format!("{}_{stem}_{:05}.pgm", ex.pitch, ex.id), &pgm_bytes(&ex.panels)?)?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(method: &str, rung: u8) -> MetricsReport {
        MetricsReport {
            method: method.into(),
            pitch_index: PitchIndex::Rung(rung),
            per_sample_pcc: vec![0.5, 0.7],
            per_sample_mse: vec![0.1, 0.3],
            mean_pcc: 0.6,
            mean_mse: 0.2,
            cm_before: 0.3,
            cm_after: 0.35,
            per_sample_recon_pcc: vec![0.8, 0.4],
            recon_mean_pcc: Some(0.6),
            success_rate: Some(0.5),
            degenerate: 0,
            notes: vec![],
        }
    }

    #[test]
    fn single_report_single_row() {
        let t = render_table(&[report("bicubic", 2)]).unwrap();
        assert_eq!(t.lines().count(), 2);
        assert!(t.lines().nth(1).unwrap().starts_with("d2"));
        assert!(render_table(&[]).is_err());
    }

    #[test]
    fn rows_per_rung_columns_per_method() {
        let t = render_table(&[report("bicubic", 2), report("internet", 2), report("bicubic", 3)]).unwrap();
        assert_eq!(t.lines().count(), 3);
        assert!(t.lines().nth(2).unwrap().contains('-'));
    }

    #[test]
    fn json_round_trip() {
        let rs = vec![report("bicubic", 2), report("internet", 3)];
        assert_eq!(from_json(&to_json(&rs).unwrap()).unwrap(), rs);
    }

    #[test]
    fn pgm_layout() {
        let a = Raster::from_fn(2, 2, |r, c| (r * 2 + c) as f32);
        let b = Raster::from_fn(3, 3, |_, _| 1.0);
        let bytes = pgm_bytes(&[a, b]).unwrap();
        let header = b"P5\n7 3\n65535\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len(), header.len() + 7 * 3 * 2);
        // first panel's top-right pixel is 1/3 of full scale, big-endian
        let px = u16::from_be_bytes([bytes[header.len() + 2], bytes[header.len() + 3]]);
        assert_eq!(px, (65535.0f32 / 3.0).round() as u16);
    }
}

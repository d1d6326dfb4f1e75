//! Binary raster files.
//!
//! Layout (little endian): 4-byte magic, `u32` width, `u32` height, `f32`
//! pixel pitch (µm), `i32` pitch index (`-1` = raw), then `width * height`
//! `f32` samples in row-major order. Speckle frames use `SPK1`, phase objects
//! `PHO1`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::optics::{PhaseObject, SpecklePattern};
use crate::raster::{PitchIndex, Raster};

pub const SPECKLE_MAGIC: [u8; 4] = *b"SPK1";
pub const PHASE_MAGIC: [u8; 4] = *b"PHO1";
const HEADER_LEN: usize = 20;

/// Header fields shared by both formats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterHeader {
    pub magic: [u8; 4],
    pub width: u32,
    pub height: u32,
    pub pixel_pitch_um: f32,
    pub pitch_index: i32,
}

pub fn encode(header: &RasterHeader, raster: &Raster) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + raster.data().len() * 4);
    out.extend_from_slice(&header.magic);
    out.extend_from_slice(&header.width.to_le_bytes());
    out.extend_from_slice(&header.height.to_le_bytes());
    out.extend_from_slice(&header.pixel_pitch_um.to_le_bytes());
    out.extend_from_slice(&header.pitch_index.to_le_bytes());
    for v in raster.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], expected_magic: [u8; 4]) -> Result<(RasterHeader, Raster)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let word = |i: usize| [bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]];
    let magic = word(0);
    if magic != expected_magic {
        return Err(Error::BadMagic {
            expected: expected_magic,
            found: magic,
        });
    }
    let header = RasterHeader {
        magic,
        width: u32::from_le_bytes(word(4)),
        height: u32::from_le_bytes(word(8)),
        pixel_pitch_um: f32::from_le_bytes(word(12)),
        pitch_index: i32::from_le_bytes(word(16)),
    };
    let count = (header.width as usize)
        .checked_mul(header.height as usize)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| Error::InvalidArgument("raster dimensions overflow".into()))?;
    let expected = HEADER_LEN + count;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let raster = Raster::new(header.width as usize, header.height as usize, data)?;
    Ok((header, raster))
}

pub fn speckle_to_bytes(p: &SpecklePattern) -> Vec<u8> {
    let header = RasterHeader {
        magic: SPECKLE_MAGIC,
        width: p.intensity.width() as u32,
        height: p.intensity.height() as u32,
        pixel_pitch_um: p.pixel_pitch_um,
        pitch_index: p.pitch_index.to_i32(),
    };
    encode(&header, &p.intensity)
}

pub fn speckle_from_bytes(bytes: &[u8]) -> Result<SpecklePattern> {
    let (h, raster) = decode(bytes, SPECKLE_MAGIC)?;
    SpecklePattern::new(raster, h.pixel_pitch_um, PitchIndex::from_i32(h.pitch_index)?)
}

pub fn phase_to_bytes(p: &PhaseObject) -> Vec<u8> {
    let header = RasterHeader {
        magic: PHASE_MAGIC,
        width: p.size() as u32,
        height: p.size() as u32,
        pixel_pitch_um: 0.0,
        // the label rides in the pitch slot; -1 when absent
        pitch_index: p.source_label().map(i32::from).unwrap_or(-1),
    };
    encode(&header, p.phase())
}

pub fn phase_from_bytes(bytes: &[u8]) -> Result<PhaseObject> {
    let (h, raster) = decode(bytes, PHASE_MAGIC)?;
    let label = u8::try_from(h.pitch_index).ok();
    PhaseObject::new(raster, label)
}

/// Writes via a temporary sibling file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_speckle(path: &Path, p: &SpecklePattern) -> Result<()> {
    write_atomic(path, &speckle_to_bytes(p))
}

pub fn read_speckle(path: &Path) -> Result<SpecklePattern> {
    speckle_from_bytes(&fs::read(path)?)
}

pub fn write_phase(path: &Path, p: &PhaseObject) -> Result<()> {
    write_atomic(path, &phase_to_bytes(p))
}

pub fn read_phase(path: &Path) -> Result<PhaseObject> {
    phase_from_bytes(&fs::read(path)?)
}

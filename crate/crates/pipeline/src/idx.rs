//! IDX container reader (the MNIST distribution format).
//!
//! Big-endian u32 magic (`0x00000803` images, `0x00000801` labels), one
//! big-endian u32 per dimension, then the raw u8 payload.

use speckle_core::optics::GrayImage;
use thiserror::Error;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IdxError {
    #[error("bad IDX magic {0:#010x}")]
    BadMagic(u32),
    #[error("truncated IDX data: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("IDX dimensions {0:?} overflow the addressable size")]
    DimensionOverflow(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum IdxData {
    Images(Vec<GrayImage>),
    Labels(Vec<u8>),
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32, IdxError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or(IdxError::Truncated {
            expected: at + 4,
            actual: bytes.len(),
        })
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxData, IdxError> {
    let magic = be_u32(bytes, 0)?;
    let ndims = match magic {
        IMAGES_MAGIC => 3,
        LABELS_MAGIC => 1,
        other => return Err(IdxError::BadMagic(other)),
    };
    let dims = (0..ndims).map(|i| be_u32(bytes, 4 + 4 * i)).collect::<Result<Vec<_>, _>>()?;
    let header = 4 + 4 * ndims;
    let payload = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .and_then(|n| n.checked_add(header))
        .ok_or_else(|| IdxError::DimensionOverflow(dims.clone()))?;
    if bytes.len() < payload {
        return Err(IdxError::Truncated {
            expected: payload,
            actual: bytes.len(),
        });
    }
    let body = &bytes[header..payload];
    Ok(if magic == LABELS_MAGIC {
        IdxData::Labels(body.to_vec())
    } else {
        let (h, w) = (dims[1] as usize, dims[2] as usize);
        let per = h * w;
        let images = (0..dims[0] as usize)
            .map(|i| GrayImage::new(w, h, body[i * per..(i + 1) * per].to_vec()).expect("sized by header"))
            .collect();
        IdxData::Images(images)
    })
}

/// Serializes images back into an IDX image file.
pub fn encode_images(images: &[GrayImage]) -> Vec<u8> {
    let (h, w) = images.first().map(|i| (i.height, i.width)).unwrap_or((0, 0));
    let mut out = Vec::with_capacity(16 + images.len() * h * w);
    for v in [IMAGES_MAGIC, images.len() as u32, h as u32, w as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for img in images {
        out.extend_from_slice(&img.data);
    }
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
        let mut v = magic.to_be_bytes().to_vec();
        for d in dims {
            v.extend_from_slice(&d.to_be_bytes());
        }
        v
    }

    #[test]
    fn two_images() {
        let mut b = header(IMAGES_MAGIC, &[2, 28, 28]);
        b.extend((0..1568).map(|i| (i % 251) as u8));
        let IdxData::Images(imgs) = parse_idx(&b).unwrap() else { panic!("images") };
        assert_eq!(imgs.len(), 2);
        assert_eq!((imgs[1].width, imgs[1].height), (28, 28));
        assert_eq!(imgs[1].data[0], (784 % 251) as u8);
    }

    #[test]
    fn five_labels() {
        let mut b = header(LABELS_MAGIC, &[5]);
        b.extend([0, 1, 2, 3, 4]);
        assert_eq!(parse_idx(&b).unwrap(), IdxData::Labels(vec![0, 1, 2, 3, 4]));
    }

    #[test]
    fn one_byte_short() {
        let mut b = header(IMAGES_MAGIC, &[2, 28, 28]);
        b.extend(vec![0u8; 1567]);
        assert_eq!(
            parse_idx(&b),
            Err(IdxError::Truncated {
                expected: 1584,
                actual: 1583
            })
        );
        let msg = parse_idx(&b).unwrap_err().to_string();
        assert!(msg.contains("1584") && msg.contains("1583"));
    }

    #[test]
    fn errors_are_distinct() {
        assert_eq!(parse_idx(&header(0x0803_0000, &[])), Err(IdxError::BadMagic(0x0803_0000)));
        assert!(matches!(parse_idx(&[0, 0]), Err(IdxError::Truncated { .. })));
        let big = header(IMAGES_MAGIC, &[u32::MAX, u32::MAX, u32::MAX]);
        assert!(matches!(parse_idx(&big), Err(IdxError::DimensionOverflow(_))));
    }

    #[test]
    fn encode_round_trip() {
        let imgs = vec![GrayImage::new(3, 2, vec![1, 2, 3, 4, 5, 6]).unwrap(); 2];
        assert_eq!(parse_idx(&encode_images(&imgs)).unwrap(), IdxData::Images(imgs));
        assert_eq!(parse_idx(&encode_labels(&[7, 9])).unwrap(), IdxData::Labels(vec![7, 9]));
    }
}

//! Binary checkpoint: `SIL1` magic, u32 version, u32 layer count, one record
//! per layer (u8 kind tag, hyperparameter u32s, u64 offset and u64 length of
//! its weights in f32 elements), the f32 weight blob, then a JSON metadata
//! block prefixed by its u32 byte length. All integers little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::layers::LayerSpec;
use crate::model::{Architecture, Model};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"SIL1";
pub const VERSION: u32 = 1;

/// Training record stored next to the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub architecture: Architecture,
    pub input_shape: [usize; 3],
    pub seed: u64,
    pub final_loss: Option<f64>,
    pub epoch_losses: Vec<f64>,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let layers = self.model.layers();
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for layer in layers {
            let (tag, hyper) = layer.encode();
            out.push(tag);
            for h in hyper {
                out.extend_from_slice(&h.to_le_bytes());
            }
            let len = layer.param_count() as u64;
            out.extend_from_slice(&offset.to_le_bytes());
            out.extend_from_slice(&len.to_le_bytes());
            offset += len;
        }
        for p in self.model.params() {
            for v in p.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let meta = serde_json::to_vec(&self.meta)?;
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(NnError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut layers = Vec::with_capacity(count.min(1024));
        let mut spans = Vec::with_capacity(count.min(1024));
        let mut expected_offset = 0u64;
        for _ in 0..count {
            let tag = r.take(1)?[0];
            let words = LayerSpec::hyper_len(tag).ok_or_else(|| NnError::Checkpoint(format!("unknown layer tag {tag}")))?;
            let hyper = (0..words).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let layer = LayerSpec::decode(tag, &hyper)?;
            let (offset, len) = (r.u64()?, r.u64()?);
            if offset != expected_offset || len != layer.param_count() as u64 {
                return Err(NnError::Checkpoint(format!(
                    "layer {} weight span ({offset}, {len}) inconsistent with its shape",
                    layer.name()
                )));
            }
            expected_offset += len;
            layers.push(layer);
            spans.push(len);
        }
        let total = usize::try_from(expected_offset).map_err(|_| NnError::Checkpoint("blob too large".into()))?;
        let blob = r.take(total.checked_mul(4).ok_or_else(|| NnError::Checkpoint("blob too large".into()))?)?;
        let mut values = blob.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
        let mut params = Vec::new();
        for layer in &layers {
            for shape in layer.param_shapes() {
                let n = shape.iter().product();
                params.push(Tensor::new(shape, values.by_ref().take(n).collect())?);
            }
        }
        let meta_len = r.u32()? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)?;
        if r.pos != bytes.len() {
            return Err(NnError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let model = Model::from_parts(layers, meta.input_shape, params)?;
        Ok(Self { model, meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        speckle_core::io::write_atomic(path, &self.to_bytes()?).map_err(|e| NnError::Checkpoint(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            NnError::Checkpoint(format!(
                "truncated: need {n} bytes at offset {}, have {}",
                self.pos,
                self.bytes.len() - self.pos
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_internet;

    fn sample() -> Checkpoint {
        let model = build_internet::<f32>(2, 4, 4, 8, 9).unwrap();
        Checkpoint {
            meta: CheckpointMeta {
                architecture: Architecture::InterNet {
                    variant: 2,
                    bin_factor: 4,
                    channels: 4,
                },
                input_shape: model.input_shape(),
                seed: 9,
                final_loss: Some(-0.5),
                epoch_losses: vec![-0.1, -0.5],
                config: serde_json::json!({"epochs": 2}),
            },
            model,
        }
    }

    #[test]
    fn bytes_round_trip() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }
}

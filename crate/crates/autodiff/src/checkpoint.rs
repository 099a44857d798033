//! `SPCK` parameter checkpoint files.
//!
//! Layout: the magic `SPCK`, a little-endian `u16` version, a little-endian
//! `u32` header length, a JSON header, then every tensor as little-endian
//! `f32`. The header carries free-form metadata and a directory of
//! `(name, shape, offset)` entries, offsets counted in elements from the start
//! of the payload.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AutodiffError, Result};
use crate::real::Real;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SPCK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push<T: Real>(&mut self, name: impl Into<String>, tensor: &Tensor<T>) {
        self.tensors.push((name.into(), tensor.cast()));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Like [`Checkpoint::get`] but a missing tensor is an error.
    pub fn require(&self, name: &str) -> Result<&Tensor<f32>> {
        self.get(name)
            .ok_or_else(|| AutodiffError::Checkpoint(format!("checkpoint has no tensor `{name}`")))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut offset = 0;
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            if entries.iter().any(|e: &TensorEntry| &e.name == name) {
                return Err(AutodiffError::Checkpoint(format!("duplicate tensor name `{name}`")));
            }
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += t.len();
        }
        let header = serde_json::to_vec(&Header {
            meta: self.meta.clone(),
            tensors: entries,
        })
        .map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        let mut payload = Vec::with_capacity(offset * 4);
        for (_, t) in &self.tensors {
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&payload)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(AutodiffError::Checkpoint(format!("bad magic {magic:?}")));
        }
        let mut v = [0u8; 2];
        r.read_exact(&mut v)?;
        let version = u16::from_le_bytes(v);
        if version != CHECKPOINT_VERSION {
            return Err(AutodiffError::Checkpoint(format!("unsupported version {version}")));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut header)?;
        let header: Header =
            serde_json::from_slice(&header).map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        if payload.len() % 4 != 0 {
            return Err(AutodiffError::Checkpoint("payload is not a whole number of f32".into()));
        }
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            let slice = values.get(e.offset..e.offset + n).ok_or_else(|| {
                AutodiffError::Checkpoint(format!("tensor `{}` runs past the payload", e.name))
            })?;
            tensors.push((e.name, Tensor::new(e.shape, slice.to_vec())?));
        }
        Ok(Self {
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(bytes.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_names_shapes_and_bits() {
        let mut ck = Checkpoint::new(serde_json::json!({"arch": "test", "n": 3}));
        ck.push("a", &Tensor::new(vec![2, 3], vec![1.0f32, -0.0, 3.5, f32::MIN_POSITIVE, 7.0, -1e30]).unwrap());
        ck.push("b.running_var", &Tensor::new(vec![1], vec![0.25f64]).unwrap());
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"SPCK");
        let back = Checkpoint::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut ck = Checkpoint::new(serde_json::Value::Null);
        ck.push("w", &Tensor::new(vec![4], vec![1.0f32; 4]).unwrap());
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(Checkpoint::read_from(bad.as_slice()).is_err());
        buf.truncate(buf.len() - 4);
        assert!(Checkpoint::read_from(buf.as_slice()).is_err());
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let mut ck = Checkpoint::new(serde_json::Value::Null);
        ck.push("w", &Tensor::new(vec![1], vec![1.0f32]).unwrap());
        ck.push("w", &Tensor::new(vec![1], vec![2.0f32]).unwrap());
        assert!(ck.write_to(Vec::new()).is_err());
    }
}

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::orientation::Orientation;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SPFR";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub class_id: String,
    pub orientation: Option<Orientation>,
    pub target_dnmed: f64,
    pub rng_seed: u64,
}

/// Single-channel count image, row-major. Rendered frames hold values
/// exactly representable as `f32`, so a save/load round trip is lossless.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
    pub meta: Option<FrameMeta>,
}

impl Frame {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Data(format!("empty frame {height}x{width}")));
        }
        if pixels.len() != height * width {
            return Err(Error::Data(format!(
                "frame {height}x{width} needs {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        if let Some(p) = pixels.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::Data(format!("frame pixel {p} is negative or non-finite")));
        }
        Ok(Self {
            height,
            width,
            pixels,
            meta: None,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn with_meta(mut self, meta: FrameMeta) -> Self {
        self.meta = Some(meta);
        self
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.pixels[r * self.width..(r + 1) * self.width]
    }

    pub fn total(&self) -> f64 {
        self.pixels.iter().sum()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut buf = Vec::with_capacity(14 + 4 * self.pixels.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.height as u32).to_le_bytes());
        buf.extend_from_slice(&(self.width as u32).to_le_bytes());
        for &p in &self.pixels {
            buf.extend_from_slice(&(p as f32).to_le_bytes());
        }
        w.write_all(&buf).map_err(|e| Error::Data(format!("writing frame: {e}")))
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::Data(format!("reading frame: {e}")))?;
        if bytes.len() < 14 || &bytes[..4] != MAGIC {
            return Err(Error::Data("not an SPFR frame file".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::Data(format!("unsupported SPFR version {version}")));
        }
        let height = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let width = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
        let payload = &bytes[14..];
        if payload.len() != 4 * height * width {
            return Err(Error::Data(format!(
                "SPFR payload is {} bytes, header says {height}x{width}",
                payload.len()
            )));
        }
        let pixels = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Self::new(height, width, pixels)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(f))
    }
}

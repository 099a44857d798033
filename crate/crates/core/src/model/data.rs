use rand::Rng;
use rayon::prelude::*;
use spectranet_autodiff::Tensor;

use super::network::{Mode, Model};
use crate::error::{Error, Result};
use crate::manifest::DatasetManifest;

/// Frames held in memory as `f32`, with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
    pub labels: Vec<usize>,
    pub dnmed: Vec<f64>,
}

impl FrameSet {
    /// Load every frame of `manifest`; labels index into `class_names`.
    pub fn from_manifest(manifest: &DatasetManifest, class_names: &[String]) -> Result<Self> {
        if manifest.is_empty() {
            return Err(Error::Data("manifest has no frames".into()));
        }
        let frames: Vec<_> = manifest
            .records
            .par_iter()
            .map(|r| manifest.load_frame(r))
            .collect::<Result<_>>()?;
        let (height, width) = (frames[0].height, frames[0].width);
        let mut pixels = Vec::with_capacity(frames.len() * height * width);
        let mut labels = Vec::with_capacity(frames.len());
        for (f, r) in frames.iter().zip(&manifest.records) {
            if (f.height, f.width) != (height, width) {
                return Err(Error::Data(format!(
                    "{}: frame is {}x{}, expected {height}x{width}",
                    r.path, f.height, f.width
                )));
            }
            let label = class_names
                .iter()
                .position(|c| *c == r.class_id)
                .ok_or_else(|| Error::Data(format!("{}: unknown class `{}`", r.path, r.class_id)))?;
            pixels.extend(f.pixels.iter().map(|&p| p as f32));
            labels.push(label);
        }
        Ok(Self {
            height,
            width,
            pixels,
            labels,
            dnmed: manifest.records.iter().map(|r| r.measured_dnmed).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.pixels[i * n..(i + 1) * n]
    }

    /// `[idx.len(), 1, height, width]` tensor of the selected frames.
    pub fn batch(&self, idx: &[usize]) -> Tensor<f32> {
        let mut data = Vec::with_capacity(idx.len() * self.height * self.width);
        for &i in idx {
            data.extend_from_slice(self.frame(i));
        }
        Tensor::new(vec![idx.len(), 1, self.height, self.width], data).expect("batch shape")
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            height: self.height,
            width: self.width,
            pixels: self.batch(idx).into_data(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            dnmed: idx.iter().map(|&i| self.dnmed[i]).collect(),
        }
    }
}

/// Logits of every frame, `len x n_classes` row-major, in batches.
pub fn predict_logits<R: Rng + ?Sized>(
    model: &Model,
    set: &FrameSet,
    mode: Mode,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(set.len() * model.config().n_classes);
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        out.extend(model.logits(&set.batch(chunk), mode, rng)?.into_data());
    }
    Ok(out)
}

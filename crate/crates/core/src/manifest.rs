//! JSON-lines index of stored frames.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::frame::Frame;
use crate::sim::orientation::Orientation;

pub const FLAT_CLASS: &str = "flat";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Unassigned,
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Unassigned => "unassigned",
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    /// Frame file, relative to the manifest's directory unless absolute.
    pub path: String,
    pub class_id: String,
    #[serde(default)]
    pub split: Split,
    pub orientation: Option<Orientation>,
    pub target_dnmed: f64,
    pub measured_dnmed: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    /// Directory that relative frame paths resolve against.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(records: Vec<ManifestRecord>, root: impl Into<PathBuf>) -> Self {
        Self {
            records,
            root: root.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct class ids in order of first appearance.
    pub fn class_ids(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.records {
            if !out.contains(&r.class_id) {
                out.push(r.class_id.clone());
            }
        }
        out
    }

    pub fn class_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            *counts.entry(r.class_id.clone()).or_insert(0) += 1;
        }
        counts
    }

    pub fn with_split(&self, split: Split) -> Self {
        Self {
            records: self.records.iter().filter(|r| r.split == split).cloned().collect(),
            root: self.root.clone(),
        }
    }

    pub fn frame_path(&self, rec: &ManifestRecord) -> PathBuf {
        let p = Path::new(&rec.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn load_frame(&self, rec: &ManifestRecord) -> Result<Frame> {
        Frame::load(self.frame_path(rec))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n").map_err(|e| Error::Data(format!("writing manifest: {e}")))?;
        }
        Ok(())
    }

    /// Writes the JSON lines to `path`; `root` becomes its parent directory.
    pub fn save(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))?;
        self.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
            records.push(rec);
        }
        Ok(Self {
            records,
            root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }
}

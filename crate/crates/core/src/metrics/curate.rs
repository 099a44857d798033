use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::manifest::DatasetManifest;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassSurvival {
    pub class_id: String,
    pub before: usize,
    pub after: usize,
}

#[derive(Debug, Clone)]
pub struct Curation {
    pub manifest: DatasetManifest,
    pub per_class: Vec<ClassSurvival>,
}

/// Keep frames whose measured DN_med exceeds `threshold`. A threshold of 0
/// disables the cut, so frames with no target (whose DN_med scatters around
/// zero) survive it.
pub fn curate(manifest: &DatasetManifest, threshold: f64) -> Result<Curation> {
    if !(threshold >= 0.0) {
        return Err(Error::Config(format!("curation threshold must be >= 0, got {threshold}")));
    }
    let keep = |d: f64| threshold == 0.0 || d > threshold;
    let records: Vec<_> = manifest.records.iter().filter(|r| keep(r.measured_dnmed)).cloned().collect();
    let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in &manifest.records {
        let e = counts.entry(r.class_id.as_str()).or_default();
        e.0 += 1;
        if keep(r.measured_dnmed) {
            e.1 += 1;
        }
    }
    let per_class = manifest
        .class_ids()
        .into_iter()
        .map(|c| {
            let (before, after) = counts[c.as_str()];
            ClassSurvival {
                class_id: c,
                before,
                after,
            }
        })
        .collect();
    if records.is_empty() && !manifest.is_empty() {
        log::warn!("no frames survive a DN_med cut at {threshold}");
    }
    Ok(Curation {
        manifest: DatasetManifest::new(records, manifest.root.clone()),
        per_class,
    })
}

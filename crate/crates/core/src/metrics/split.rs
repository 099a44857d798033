use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, Split};
use crate::rng::{named_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitAssignment {
    /// (train, val, test)
    pub fractions: (f64, f64, f64),
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitAssignment {
    fn default() -> Self {
        Self {
            fractions: (0.8, 0.1, 0.1),
            seed: 0,
            stratified: true,
        }
    }
}

impl SplitAssignment {
    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.fractions;
        if [a, b, c].iter().any(|f| !(*f >= 0.0)) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must be nonnegative and sum to 1, got ({a}, {b}, {c})"
            )));
        }
        Ok(())
    }

    /// Train and validation counts for a group of `n`; the rest is test.
    fn counts(&self, n: usize) -> (usize, usize) {
        let train = ((self.fractions.0 * n as f64).round() as usize).min(n);
        let val = ((self.fractions.1 * n as f64).round() as usize).min(n - train);
        (train, val)
    }
}

/// Assign every record to train, validation or test. Deterministic in the
/// seed; with stratification each class is split separately. Returns the
/// warnings raised for classes too small to stratify.
pub fn split(manifest: &DatasetManifest, assignment: &SplitAssignment) -> Result<(DatasetManifest, Vec<String>)> {
    assignment.validate()?;
    if manifest.is_empty() {
        return Err(Error::Data("cannot split an empty manifest".into()));
    }
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in manifest.records.iter().enumerate() {
        let key = if assignment.stratified { r.class_id.clone() } else { String::new() };
        groups.entry(key).or_default().push(i);
    }
    let mut warnings = Vec::new();
    let mut out = manifest.clone();
    for (key, mut idx) in groups {
        if assignment.stratified && idx.len() < 3 {
            let msg = format!("class `{key}` has {} examples; split is best effort", idx.len());
            log::warn!("{msg}");
            warnings.push(msg);
        }
        let mut rng = rng_from_seed(named_seed(assignment.seed, &format!("split/{key}")));
        idx.shuffle(&mut rng);
        let (n_train, n_val) = assignment.counts(idx.len());
        for (k, &i) in idx.iter().enumerate() {
            out.records[i].split = if k < n_train {
                Split::Train
            } else if k < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    Ok((out, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::ManifestRecord;

    fn manifest(classes: usize, per: usize) -> DatasetManifest {
        let records = (0..classes * per)
            .map(|i| ManifestRecord {
                path: format!("{i}.spfr"),
                class_id: format!("c{}", i / per),
                split: Split::Unassigned,
                orientation: None,
                target_dnmed: 100.0,
                measured_dnmed: 100.0,
                seed: i as u64,
            })
            .collect();
        DatasetManifest::new(records, "")
    }

    fn count(m: &DatasetManifest, class: Option<&str>, s: Split) -> usize {
        m.records
            .iter()
            .filter(|r| r.split == s && class.is_none_or(|c| r.class_id == c))
            .count()
    }

    #[test]
    fn one_class_of_100_splits_80_10_10() {
        let (m, w) = split(&manifest(1, 100), &SplitAssignment::default()).unwrap();
        assert!(w.is_empty());
        assert_eq!(
            [Split::Train, Split::Val, Split::Test].map(|s| count(&m, None, s)),
            [80, 10, 10]
        );
    }

    #[test]
    fn stratified_counts_per_class() {
        let (m, _) = split(&manifest(9, 200), &SplitAssignment::default()).unwrap();
        for c in 0..9 {
            let name = format!("c{c}");
            assert_eq!(count(&m, Some(&name), Split::Train), 160);
            assert_eq!(count(&m, Some(&name), Split::Val), 20);
            assert_eq!(count(&m, Some(&name), Split::Test), 20);
        }
    }

    #[test]
    fn deterministic_under_seed_and_seed_sensitive() {
        let a = SplitAssignment { seed: 3, ..Default::default() };
        let b = SplitAssignment { seed: 4, ..Default::default() };
        let m = manifest(2, 50);
        assert_eq!(split(&m, &a).unwrap().0.records, split(&m, &a).unwrap().0.records);
        assert_ne!(split(&m, &a).unwrap().0.records, split(&m, &b).unwrap().0.records);
    }

    #[test]
    fn tiny_classes_warn() {
        let (m, w) = split(&manifest(2, 2), &SplitAssignment::default()).unwrap();
        assert_eq!(w.len(), 2);
        assert!(m.records.iter().all(|r| r.split != Split::Unassigned));
    }

    #[test]
    fn rejects_bad_fractions() {
        let bad = SplitAssignment { fractions: (0.8, 0.1, 0.2), ..Default::default() };
        assert!(split(&manifest(1, 10), &bad).is_err());
    }
}

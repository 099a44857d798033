//! Labeled frame sets written to disk with a manifest.

use std::collections::HashSet;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::class_spec::{compose_sed, generate_class_library, ClassLibraryConfig, SatelliteClassSpec};
use super::instrument::{calibrate_exposure, render_frame, InstrumentModel};
use super::orientation::{sample_orientation, OrientationPolicy};
use super::spectra::{AtmosphereModel, SolarSpectrum, SOLAR_TEMPERATURE_K};
use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, ManifestRecord, Split, FLAT_CLASS};
use crate::metrics::dnmed::dn_med;
use crate::rng::{child_seed, rng_from_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub n_classes: usize,
    pub library: ClassLibraryConfig,
    pub examples_per_class: usize,
    pub orientation_policy: OrientationPolicy,
    pub jitter_deg: f64,
    /// Target DN_med is drawn uniformly from this range.
    pub dnmed_range: (f64, f64),
    pub airmass_range: (f64, f64),
    pub pwv_range_mm: (f64, f64),
    pub include_flat: bool,
    pub instrument: InstrumentModel,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_classes: 9,
            library: ClassLibraryConfig::default(),
            examples_per_class: 200,
            orientation_policy: OrientationPolicy::Nadir,
            jitter_deg: 1.0,
            dnmed_range: (50.0, 1000.0),
            airmass_range: (1.0, 2.0),
            pwv_range_mm: (1.0, 15.0),
            include_flat: false,
            instrument: InstrumentModel::default(),
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        self.instrument.validate()?;
        if self.n_classes == 0 && !self.include_flat {
            return Err(Error::Config("a dataset needs at least one class".into()));
        }
        if self.examples_per_class == 0 {
            return Err(Error::Config("examples_per_class must be >= 1".into()));
        }
        let (lo, hi) = self.dnmed_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Config(format!("DN_med range must satisfy 0 < lo <= hi, got {lo}..{hi}")));
        }
        if !(self.airmass_range.0 >= 1.0 && self.airmass_range.0 <= self.airmass_range.1) {
            return Err(Error::Config("airmass range must satisfy 1 <= lo <= hi".into()));
        }
        if !(self.pwv_range_mm.0 >= 0.0 && self.pwv_range_mm.0 <= self.pwv_range_mm.1) {
            return Err(Error::Config("pwv range must satisfy 0 <= lo <= hi".into()));
        }
        if !(self.jitter_deg >= 0.0) {
            return Err(Error::Config("jitter_deg must be >= 0".into()));
        }
        Ok(())
    }

    pub fn class_library(&self) -> Result<Vec<SatelliteClassSpec>> {
        generate_class_library(self.n_classes, &self.instrument.grid, &self.library)
    }

    /// Label names in index order: the satellite classes, then `flat` if requested.
    pub fn label_names(&self, classes: &[SatelliteClassSpec]) -> Vec<String> {
        let mut names: Vec<String> = classes.iter().map(|c| c.class_id.clone()).collect();
        if self.include_flat {
            names.push(FLAT_CLASS.to_string());
        }
        names
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Render `examples_per_class` frames per class (plus flats) into
/// `out_dir/frames/` and write `out_dir/manifest.jsonl`. Every frame draws from
/// its own child seed, so the output does not depend on thread scheduling.
pub fn generate_dataset(
    spec: &DatasetSpec,
    classes: &[SatelliteClassSpec],
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    spec.validate()?;
    let mut seen = HashSet::new();
    for c in classes {
        if !seen.insert(c.class_id.as_str()) || (spec.include_flat && c.class_id == FLAT_CLASS) {
            return Err(Error::Config(format!("duplicate class id `{}`", c.class_id)));
        }
        c.validate(&spec.instrument.grid)?;
    }
    if classes.is_empty() && !spec.include_flat {
        return Err(Error::Config("no classes to simulate".into()));
    }
    let out_dir = out_dir.as_ref();
    let frames_dir = out_dir.join("frames");
    std::fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;

    let labels = spec.label_names(classes);
    let total = labels.len() * spec.examples_per_class;
    let grid = spec.instrument.grid;
    let sun = SolarSpectrum::blackbody(&grid, SOLAR_TEMPERATURE_K);
    let dn_cfg = spec.instrument.dnmed_config();

    let records: Vec<ManifestRecord> = (0..total)
        .into_par_iter()
        .map(|i| -> Result<ManifestRecord> {
            let label = i / spec.examples_per_class;
            let seed = child_seed(spec.seed, i as u64);
            let mut rng = rng_from_seed(seed);
            let airmass = uniform(&mut rng, spec.airmass_range);
            let pwv = uniform(&mut rng, spec.pwv_range_mm);
            let atm = AtmosphereModel::parametric(&grid, airmass, pwv)?;
            let (frame, orientation, target) = match classes.get(label) {
                Some(class) => {
                    let o = sample_orientation(spec.orientation_policy, spec.jitter_deg, &mut rng);
                    let target = uniform(&mut rng, spec.dnmed_range);
                    let sed = compose_sed(class, &o, &sun, &atm)?;
                    let scale = calibrate_exposure(&sed, &spec.instrument, target)?;
                    (render_frame(&sed, &spec.instrument, scale, &mut rng)?, Some(o), target)
                }
                None => {
                    let dark = vec![0.0; grid.n_bins];
                    (render_frame(&dark, &spec.instrument, 1.0, &mut rng)?, None, 0.0)
                }
            };
            let measured = dn_med(&frame, &dn_cfg)?.dnmed;
            let rel = format!("frames/{i:06}.spfr");
            frame.save(out_dir.join(&rel))?;
            Ok(ManifestRecord {
                path: rel,
                class_id: labels[label].clone(),
                split: Split::Unassigned,
                orientation,
                target_dnmed: target,
                measured_dnmed: measured,
                seed,
            })
        })
        .collect::<Result<_>>()?;

    let mut manifest = DatasetManifest::new(records, out_dir);
    manifest.save(out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::frame::Frame;

    fn small() -> DatasetSpec {
        DatasetSpec {
            n_classes: 2,
            examples_per_class: 3,
            include_flat: true,
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn writes_frames_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let spec = small();
        let classes = spec.class_library().unwrap();
        let m = generate_dataset(&spec, &classes, dir.path()).unwrap();
        assert_eq!(m.len(), 9);
        assert_eq!(m.class_ids(), vec!["sat00", "sat01", "flat"]);
        for r in &m.records {
            let f = m.load_frame(r).unwrap();
            assert_eq!((f.height, f.width), (64, 336));
            if r.class_id == FLAT_CLASS {
                assert!(r.orientation.is_none());
            } else {
                assert!((50.0..1000.0).contains(&r.target_dnmed));
            }
        }
    }

    #[test]
    fn single_frame_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec {
            n_classes: 1,
            examples_per_class: 1,
            seed: 5,
            ..Default::default()
        };
        let classes = spec.class_library().unwrap();
        let m = generate_dataset(&spec, &classes, dir.path()).unwrap();
        assert_eq!(m.len(), 1);
        let f = m.load_frame(&m.records[0]).unwrap();
        let mut rng = rng_from_seed(m.records[0].seed);
        // replay the frame's random stream
        let grid = spec.instrument.grid;
        let airmass = uniform(&mut rng, spec.airmass_range);
        let pwv = uniform(&mut rng, spec.pwv_range_mm);
        let atm = AtmosphereModel::parametric(&grid, airmass, pwv).unwrap();
        let o = sample_orientation(spec.orientation_policy, spec.jitter_deg, &mut rng);
        let target = uniform(&mut rng, spec.dnmed_range);
        let sed = compose_sed(&classes[0], &o, &SolarSpectrum::blackbody(&grid, SOLAR_TEMPERATURE_K), &atm).unwrap();
        let scale = calibrate_exposure(&sed, &spec.instrument, target).unwrap();
        let direct: Frame = render_frame(&sed, &spec.instrument, scale, &mut rng).unwrap();
        assert_eq!(f.pixels, direct.pixels);
    }

    #[test]
    fn reruns_are_byte_identical() {
        let spec = small();
        let classes = spec.class_library().unwrap();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        generate_dataset(&spec, &classes, a.path()).unwrap();
        generate_dataset(&spec, &classes, b.path()).unwrap();
        let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
        assert_eq!(read(a.path(), "manifest.jsonl"), read(b.path(), "manifest.jsonl"));
        assert_eq!(read(a.path(), "frames/000004.spfr"), read(b.path(), "frames/000004.spfr"));
    }

    #[test]
    fn duplicate_ids_and_bad_paths_fail() {
        let spec = small();
        let mut classes = spec.class_library().unwrap();
        classes[1].class_id = classes[0].class_id.clone();
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(generate_dataset(&spec, &classes, dir.path()), Err(Error::Config(_))));

        let classes = spec.class_library().unwrap();
        let file = dir.path().join("occupied");
        std::fs::write(&file, b"x").unwrap();
        assert!(matches!(generate_dataset(&spec, &classes, &file), Err(Error::Io { .. })));
    }
}

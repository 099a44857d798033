//! Generative description of a satellite class and the spectral composition rule.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::orientation::{real_spherical_harmonics, Orientation, SH_COEFFS};
use super::spectra::{AtmosphereModel, MaterialSpectrum, SolarSpectrum, WavelengthGrid};
use crate::error::{Error, Result};
use crate::rng::{named_seed, rng_from_seed};

/// Materials plus, for each, spherical-harmonic coefficients of an
/// orientation-dependent mixing weight. Weights are clipped at zero and
/// renormalized to sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SatelliteClassSpec {
    pub class_id: String,
    pub materials: Vec<MaterialSpectrum>,
    pub weight_basis: Vec<Vec<f64>>,
}

impl SatelliteClassSpec {
    pub fn validate(&self, grid: &WavelengthGrid) -> Result<()> {
        if self.materials.is_empty() {
            return Err(Error::Config(format!("class `{}` has no materials", self.class_id)));
        }
        if self.weight_basis.len() != self.materials.len() {
            return Err(Error::Config(format!(
                "class `{}` has {} materials but {} weight rows",
                self.class_id,
                self.materials.len(),
                self.weight_basis.len()
            )));
        }
        for (m, coeffs) in self.materials.iter().zip(&self.weight_basis) {
            m.validate(grid)?;
            if coeffs.is_empty() || coeffs.len() > SH_COEFFS || !matches!(coeffs.len(), 1 | 4 | 9) {
                return Err(Error::Config(format!(
                    "class `{}` material `{}`: expected 1, 4 or 9 harmonic coefficients, got {}",
                    self.class_id,
                    m.name,
                    coeffs.len()
                )));
            }
        }
        Ok(())
    }

    /// Nonnegative mixing weights summing to one. If every clipped weight
    /// vanishes the materials are mixed uniformly.
    pub fn weights(&self, orientation: &Orientation) -> Vec<f64> {
        let y = real_spherical_harmonics(orientation);
        let raw: Vec<f64> = self
            .weight_basis
            .iter()
            .map(|c| c.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>().max(0.0))
            .collect();
        let total: f64 = raw.iter().sum();
        if total <= 1e-12 {
            let n = raw.len() as f64;
            return vec![1.0 / n; raw.len()];
        }
        raw.into_iter().map(|w| w / total).collect()
    }
}

/// Photon rate per wavelength bin: `sun * transmission * sum_i w_i(orientation) * reflectance_i`.
pub fn compose_sed(
    spec: &SatelliteClassSpec,
    orientation: &Orientation,
    sun: &SolarSpectrum,
    atm: &AtmosphereModel,
) -> Result<Vec<f64>> {
    let n = sun.photon_flux.len();
    if atm.transmission.len() != n {
        return Err(Error::Config(format!(
            "atmosphere has {} bins, solar spectrum {n}",
            atm.transmission.len()
        )));
    }
    if let Some(m) = spec.materials.iter().find(|m| m.reflectance.len() != n) {
        return Err(Error::Config(format!(
            "material `{}` has {} bins, solar spectrum {n}",
            m.name,
            m.reflectance.len()
        )));
    }
    let w = spec.weights(orientation);
    Ok((0..n)
        .map(|k| {
            let mix: f64 = spec.materials.iter().zip(&w).map(|(m, wi)| wi * m.reflectance[k]).sum();
            (sun.photon_flux[k] * atm.transmission[k] * mix).max(0.0)
        })
        .collect())
}

/// Parameters of the procedural class library.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassLibraryConfig {
    pub seed: u64,
    /// Size of the shared material pool classes draw from.
    pub pool_size: usize,
    pub materials_per_class: usize,
    /// Standard deviation of the non-constant harmonic coefficients.
    pub anisotropy: f64,
    /// Peak absolute amplitude of a material's narrow spectral features.
    pub feature_amplitude: f64,
}

impl Default for ClassLibraryConfig {
    fn default() -> Self {
        Self {
            seed: 2021,
            pool_size: 8,
            materials_per_class: 3,
            anisotropy: 0.8,
            feature_amplitude: 0.05,
        }
    }
}

fn procedural_material<R: Rng + ?Sized>(
    name: String,
    grid: &WavelengthGrid,
    feature_amplitude: f64,
    rng: &mut R,
) -> MaterialSpectrum {
    let base: f64 = rng.random_range(0.15..0.55);
    let tilt: f64 = rng.random_range(-0.15..0.15);
    let n_features = rng.random_range(2..=3);
    let features: Vec<(f64, f64, f64)> = (0..n_features)
        .map(|_| {
            (
                rng.random_range(grid.lambda_min + 20.0..grid.lambda_max - 20.0),
                rng.random_range(10.0..35.0),
                rng.random_range(-feature_amplitude..=feature_amplitude),
            )
        })
        .collect();
    let span = grid.lambda_max - grid.lambda_min;
    let reflectance = grid
        .centers()
        .iter()
        .map(|&l| {
            let x = 2.0 * (l - grid.lambda_min) / span - 1.0;
            let bumps: f64 = features
                .iter()
                .map(|&(c, s, a)| a * (-0.5 * ((l - c) / s).powi(2)).exp())
                .sum();
            (base + tilt * x + bumps).clamp(0.02, 0.98)
        })
        .collect();
    MaterialSpectrum { name, reflectance }
}

/// Deterministically generate `n_classes` classes `sat00, sat01, ...`.
pub fn generate_class_library(
    n_classes: usize,
    grid: &WavelengthGrid,
    cfg: &ClassLibraryConfig,
) -> Result<Vec<SatelliteClassSpec>> {
    if cfg.materials_per_class == 0 || cfg.materials_per_class > cfg.pool_size {
        return Err(Error::Config(format!(
            "materials_per_class {} must be in 1..={}",
            cfg.materials_per_class, cfg.pool_size
        )));
    }
    let mut rng = rng_from_seed(named_seed(cfg.seed, "materials"));
    let pool: Vec<MaterialSpectrum> = (0..cfg.pool_size)
        .map(|i| procedural_material(format!("material{i:02}"), grid, cfg.feature_amplitude, &mut rng))
        .collect();
    let mut rng = rng_from_seed(named_seed(cfg.seed, "classes"));
    let coeff = Normal::new(0.0, cfg.anisotropy.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let classes = (0..n_classes)
        .map(|c| {
            let picks = sample(&mut rng, cfg.pool_size, cfg.materials_per_class).into_vec();
            let materials: Vec<MaterialSpectrum> = picks.iter().map(|&i| pool[i].clone()).collect();
            let weight_basis = materials
                .iter()
                .map(|_| {
                    let mut row = vec![rng.random_range(1.0..2.0)];
                    row.extend((1..SH_COEFFS).map(|_| coeff.sample(&mut rng)));
                    row
                })
                .collect();
            SatelliteClassSpec {
                class_id: format!("sat{c:02}"),
                materials,
                weight_basis,
            }
        })
        .collect();
    Ok(classes)
}

/// On-disk class-spec document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpecFile {
    pub grid: WavelengthGrid,
    pub classes: Vec<SatelliteClassSpec>,
}

impl ClassSpecFile {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let mut seen = HashSet::new();
        for c in &self.classes {
            if !seen.insert(c.class_id.as_str()) {
                return Err(Error::Config(format!("duplicate class id `{}`", c.class_id)));
            }
            c.validate(&self.grid)?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: Self = serde_json::from_str(&text)?;
        file.validate()?;
        Ok(file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::orientation::{sample_orientation, OrientationPolicy};

    fn grid() -> WavelengthGrid {
        WavelengthGrid::new(630.0, 980.0, 50).unwrap()
    }

    fn constant(name: &str, v: f64, g: &WavelengthGrid) -> MaterialSpectrum {
        MaterialSpectrum::new(name, vec![v; g.n_bins], g).unwrap()
    }

    #[test]
    fn unit_reflectance_in_clear_sky_returns_the_sun() {
        let g = grid();
        let spec = SatelliteClassSpec {
            class_id: "mirror".into(),
            materials: vec![constant("white", 1.0, &g)],
            weight_basis: vec![vec![1.0, 0.3, -0.2, 0.1]],
        };
        let sun = SolarSpectrum::blackbody(&g, 5772.0);
        let sed = compose_sed(&spec, &Orientation::NADIR, &sun, &AtmosphereModel::transparent(&g)).unwrap();
        assert_eq!(sed, sun.photon_flux);
    }

    #[test]
    fn equal_weights_average_the_reflectances() {
        let g = grid();
        let r1: Vec<f64> = (0..g.n_bins).map(|i| 0.1 + 0.01 * i as f64).collect();
        let r2: Vec<f64> = (0..g.n_bins).map(|i| 0.9 - 0.01 * i as f64).collect();
        let spec = SatelliteClassSpec {
            class_id: "pair".into(),
            materials: vec![
                MaterialSpectrum::new("a", r1.clone(), &g).unwrap(),
                MaterialSpectrum::new("b", r2.clone(), &g).unwrap(),
            ],
            weight_basis: vec![vec![1.0], vec![1.0]],
        };
        let sun = SolarSpectrum::blackbody(&g, 5772.0);
        let atm = AtmosphereModel::parametric(&g, 1.2, 4.0).unwrap();
        let sed = compose_sed(&spec, &Orientation { theta: 1.0, phi: 2.0 }, &sun, &atm).unwrap();
        for k in 0..g.n_bins {
            let want = sun.photon_flux[k] * atm.transmission[k] * (r1[k] + r2[k]) / 2.0;
            assert!((sed[k] - want).abs() <= 1e-15 * want.abs().max(1.0));
        }
    }

    #[test]
    fn three_material_composition_matches_direct_dot_products() {
        let g = grid();
        let lib = generate_class_library(3, &g, &ClassLibraryConfig::default()).unwrap();
        let spec = &lib[1];
        assert_eq!(spec.materials.len(), 3);
        let o = Orientation { theta: 0.7, phi: 4.1 };
        let sun = SolarSpectrum::blackbody(&g, 5772.0);
        let atm = AtmosphereModel::parametric(&g, 1.5, 6.0).unwrap();
        let sed = compose_sed(spec, &o, &sun, &atm).unwrap();

        // independent weight evaluation from the explicit harmonic formulas
        let [x, y, z] = o.unit_vector();
        let pi = std::f64::consts::PI;
        let basis = [
            0.5 / pi.sqrt(),
            (3.0 / (4.0 * pi)).sqrt() * y,
            (3.0 / (4.0 * pi)).sqrt() * z,
            (3.0 / (4.0 * pi)).sqrt() * x,
            0.5 * (15.0 / pi).sqrt() * x * y,
            0.5 * (15.0 / pi).sqrt() * y * z,
            0.25 * (5.0 / pi).sqrt() * (3.0 * z * z - 1.0),
            0.5 * (15.0 / pi).sqrt() * x * z,
            0.25 * (15.0 / pi).sqrt() * (x * x - y * y),
        ];
        let raw: Vec<f64> = spec
            .weight_basis
            .iter()
            .map(|c| c.iter().zip(basis).map(|(a, b)| a * b).sum::<f64>().max(0.0))
            .collect();
        let total: f64 = raw.iter().sum();
        for k in 0..g.n_bins {
            let mix: f64 = (0..3).map(|i| raw[i] / total * spec.materials[i].reflectance[k]).sum();
            let want = sun.photon_flux[k] * atm.transmission[k] * mix;
            assert!((sed[k] - want).abs() <= 1e-12 * want.abs(), "bin {k}: {} vs {want}", sed[k]);
        }
    }

    #[test]
    fn grid_mismatch_is_a_configuration_error() {
        let g = grid();
        let other = WavelengthGrid::new(630.0, 980.0, 40).unwrap();
        let spec = &generate_class_library(1, &g, &ClassLibraryConfig::default()).unwrap()[0];
        let err = compose_sed(
            spec,
            &Orientation::NADIR,
            &SolarSpectrum::flat(&other),
            &AtmosphereModel::transparent(&other),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn weights_are_normalized_for_random_orientations() {
        let g = grid();
        let lib = generate_class_library(9, &g, &ClassLibraryConfig::default()).unwrap();
        let mut rng = rng_from_seed(3);
        for spec in &lib {
            for _ in 0..10_000 {
                let o = sample_orientation(OrientationPolicy::Random, 0.0, &mut rng);
                let w = spec.weights(&o);
                assert!(w.iter().all(|&v| v >= 0.0));
                assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn all_clipped_weights_fall_back_to_uniform() {
        let g = grid();
        let spec = SatelliteClassSpec {
            class_id: "dark".into(),
            materials: vec![constant("a", 0.2, &g), constant("b", 0.4, &g)],
            weight_basis: vec![vec![-1.0], vec![-2.0]],
        };
        assert_eq!(spec.weights(&Orientation::NADIR), vec![0.5, 0.5]);
    }

    #[test]
    fn identical_classes_produce_identical_seds() {
        let g = grid();
        let lib = generate_class_library(1, &g, &ClassLibraryConfig::default()).unwrap();
        let mut twin = lib[0].clone();
        twin.class_id = "twin".into();
        let sun = SolarSpectrum::blackbody(&g, 5772.0);
        let atm = AtmosphereModel::parametric(&g, 1.1, 3.0).unwrap();
        let mut rng = rng_from_seed(4);
        for _ in 0..100 {
            let o = sample_orientation(OrientationPolicy::Random, 0.0, &mut rng);
            assert_eq!(
                compose_sed(&lib[0], &o, &sun, &atm).unwrap(),
                compose_sed(&twin, &o, &sun, &atm).unwrap()
            );
        }
    }

    #[test]
    fn library_is_deterministic_and_file_round_trips() {
        let g = grid();
        let cfg = ClassLibraryConfig::default();
        let a = generate_class_library(4, &g, &cfg).unwrap();
        assert_eq!(a, generate_class_library(4, &g, &cfg).unwrap());
        let file = ClassSpecFile { grid: g, classes: a };
        file.validate().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("classes.json");
        file.save(&path).unwrap();
        assert_eq!(ClassSpecFile::load(&path).unwrap(), file);

        let mut dup = file.clone();
        dup.classes[1].class_id = dup.classes[0].class_id.clone();
        assert!(dup.validate().is_err());
    }
}

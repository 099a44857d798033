//! Wavelength grid and the spectral vectors defined on it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniformly spaced bin centers from `lambda_min` to `lambda_max` inclusive, in nanometers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WavelengthGrid {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub n_bins: usize,
}

impl WavelengthGrid {
    pub fn new(lambda_min: f64, lambda_max: f64, n_bins: usize) -> Result<Self> {
        let grid = Self {
            lambda_min,
            lambda_max,
            n_bins,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_min.is_finite() && self.lambda_max.is_finite() && self.lambda_min < self.lambda_max) {
            return Err(Error::Config(format!(
                "wavelength grid needs lambda_min < lambda_max, got {}..{}",
                self.lambda_min, self.lambda_max
            )));
        }
        if self.n_bins < 2 {
            return Err(Error::Config(format!("wavelength grid needs >= 2 bins, got {}", self.n_bins)));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        (self.lambda_max - self.lambda_min) / (self.n_bins - 1) as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lambda_min + i as f64 * self.step()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_bins).map(|i| self.center(i)).collect()
    }

    /// Linear interpolation of `values` (one per bin) at `lambda`; zero outside the band.
    pub fn interpolate(&self, values: &[f64], lambda: f64) -> f64 {
        if lambda < self.lambda_min || lambda > self.lambda_max {
            return 0.0;
        }
        let pos = (lambda - self.lambda_min) / self.step();
        let i = (pos.floor() as usize).min(self.n_bins - 1);
        if i + 1 >= self.n_bins {
            return values[self.n_bins - 1];
        }
        let frac = pos - i as f64;
        if frac == 0.0 {
            return values[i];
        }
        values[i] * (1.0 - frac) + values[i + 1] * frac
    }

    pub(crate) fn check_len(&self, what: &str, len: usize) -> Result<()> {
        if len != self.n_bins {
            return Err(Error::Config(format!(
                "{what} has {len} samples but the wavelength grid has {} bins",
                self.n_bins
            )));
        }
        Ok(())
    }
}

impl Default for WavelengthGrid {
    /// The 630-980 nm band sampled once per detector column of the desk frame.
    fn default() -> Self {
        Self {
            lambda_min: 630.0,
            lambda_max: 980.0,
            n_bins: 336,
        }
    }
}

/// Unitless reflectance in `[0, 1]` per wavelength bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialSpectrum {
    pub name: String,
    pub reflectance: Vec<f64>,
}

impl MaterialSpectrum {
    pub fn new(name: impl Into<String>, reflectance: Vec<f64>, grid: &WavelengthGrid) -> Result<Self> {
        let m = Self {
            name: name.into(),
            reflectance,
        };
        m.validate(grid)?;
        Ok(m)
    }

    pub fn validate(&self, grid: &WavelengthGrid) -> Result<()> {
        grid.check_len(&format!("material `{}`", self.name), self.reflectance.len())?;
        if let Some(bad) = self.reflectance.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::Config(format!(
                "material `{}` has reflectance {bad} outside [0, 1]",
                self.name
            )));
        }
        Ok(())
    }
}

/// Relative solar photon flux per bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolarSpectrum {
    pub photon_flux: Vec<f64>,
}

pub const SOLAR_TEMPERATURE_K: f64 = 5772.0;

impl SolarSpectrum {
    /// Photon-count blackbody shape `lambda^-4 / (exp(hc / lambda k T) - 1)`,
    /// normalized to a peak of 1 over the grid.
    pub fn blackbody(grid: &WavelengthGrid, temperature_k: f64) -> Self {
        const HC_OVER_K_NM_K: f64 = 1.438_776_877e7;
        let raw: Vec<f64> = grid
            .centers()
            .iter()
            .map(|&l| l.powi(-4) / ((HC_OVER_K_NM_K / (l * temperature_k)).exp() - 1.0))
            .collect();
        let peak = raw.iter().cloned().fold(0.0, f64::max);
        Self {
            photon_flux: raw.into_iter().map(|v| v / peak).collect(),
        }
    }

    pub fn flat(grid: &WavelengthGrid) -> Self {
        Self {
            photon_flux: vec![1.0; grid.n_bins],
        }
    }

    pub fn validate(&self, grid: &WavelengthGrid) -> Result<()> {
        grid.check_len("solar spectrum", self.photon_flux.len())?;
        if self.photon_flux.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config("solar spectrum must be strictly positive".into()));
        }
        Ok(())
    }
}

/// Parametric atmospheric transmission: Rayleigh and aerosol continuum, the
/// oxygen A and B bands, and water bands whose optical depth scales with
/// precipitable water vapor; the total optical depth scales with airmass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtmosphereModel {
    pub airmass: f64,
    pub pwv_mm: f64,
    pub transmission: Vec<f64>,
}

/// (center nm, gaussian sigma nm, optical depth)
const OXYGEN_BANDS: [(f64, f64, f64); 2] = [(687.0, 2.5, 0.25), (762.0, 3.0, 0.7)];
/// (center nm, gaussian sigma nm, optical depth per mm of water)
const WATER_BANDS: [(f64, f64, f64); 3] = [(720.0, 8.0, 0.02), (820.0, 10.0, 0.03), (935.0, 15.0, 0.10)];

impl AtmosphereModel {
    pub fn parametric(grid: &WavelengthGrid, airmass: f64, pwv_mm: f64) -> Result<Self> {
        if !(airmass >= 1.0) {
            return Err(Error::Config(format!("airmass must be >= 1, got {airmass}")));
        }
        if !(pwv_mm >= 0.0) {
            return Err(Error::Config(format!("precipitable water vapor must be >= 0, got {pwv_mm}")));
        }
        let transmission = grid
            .centers()
            .iter()
            .map(|&l| (-airmass * zenith_optical_depth(l, pwv_mm)).exp())
            .collect();
        Ok(Self {
            airmass,
            pwv_mm,
            transmission,
        })
    }

    /// Transmission of 1 everywhere.
    pub fn transparent(grid: &WavelengthGrid) -> Self {
        Self {
            airmass: 1.0,
            pwv_mm: 0.0,
            transmission: vec![1.0; grid.n_bins],
        }
    }
}

fn gaussian(x: f64, center: f64, sigma: f64) -> f64 {
    let z = (x - center) / sigma;
    (-0.5 * z * z).exp()
}

fn zenith_optical_depth(lambda_nm: f64, pwv_mm: f64) -> f64 {
    let um = lambda_nm / 1000.0;
    let rayleigh = 0.0088 * um.powf(-4.05);
    let aerosol = 0.05 * (um / 0.55).powf(-1.3);
    let oxygen: f64 = OXYGEN_BANDS.iter().map(|&(c, s, d)| d * gaussian(lambda_nm, c, s)).sum();
    let water: f64 = WATER_BANDS.iter().map(|&(c, s, d)| d * gaussian(lambda_nm, c, s)).sum();
    rayleigh + aerosol + oxygen + pwv_mm * water
}

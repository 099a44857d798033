//! Slit-less spectrograph and detector model.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::frame::Frame;
use super::spectra::WavelengthGrid;
use crate::error::{Error, Result};
use crate::metrics::dnmed::{dn_med, DnMedConfig};

/// Affine wavelength-to-column map: `column = column_ref + (lambda - lambda_ref) * px_per_nm`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dispersion {
    pub lambda_ref: f64,
    pub column_ref: f64,
    pub px_per_nm: f64,
}

impl Dispersion {
    /// Places `lambda_min` at column 0 and `lambda_max` at column `width - 1`.
    pub fn spanning(grid: &WavelengthGrid, width: usize) -> Self {
        Self {
            lambda_ref: grid.lambda_min,
            column_ref: 0.0,
            px_per_nm: (width - 1) as f64 / (grid.lambda_max - grid.lambda_min),
        }
    }

    pub fn column(&self, lambda: f64) -> f64 {
        self.column_ref + (lambda - self.lambda_ref) * self.px_per_nm
    }

    pub fn wavelength(&self, column: f64) -> f64 {
        self.lambda_ref + (column - self.column_ref) / self.px_per_nm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InstrumentModel {
    pub frame_height: usize,
    pub frame_width: usize,
    pub grid: WavelengthGrid,
    pub dispersion: Dispersion,
    pub psf_sigma: f64,
    pub trace_row: usize,
    pub bias_level: f64,
    pub read_noise_sigma: f64,
    /// Sky counts per pixel at row 0.
    pub sky_level: f64,
    /// Added sky counts per row.
    pub background_gradient: f64,
    /// Electrons per count.
    pub gain: f64,
    pub shot_noise: bool,
    /// Expected hot pixels per frame.
    pub hot_pixel_rate: f64,
    /// Expected cosmic-ray hits per frame.
    pub cosmic_ray_rate: f64,
}

impl Default for InstrumentModel {
    fn default() -> Self {
        Self::desk(WavelengthGrid::default())
    }
}

/// Counts assigned to hot pixels and cosmic-ray hits.
pub const OUTLIER_LEVEL: f64 = 6.0e4;

impl InstrumentModel {
    /// 64 x 336 frame with one column per wavelength bin of the default grid.
    pub fn desk(grid: WavelengthGrid) -> Self {
        Self::with_geometry(grid, 64, 336)
    }

    /// 200 x 1340 frame.
    pub fn full_size(grid: WavelengthGrid) -> Self {
        Self::with_geometry(grid, 200, 1340)
    }

    pub fn with_geometry(grid: WavelengthGrid, height: usize, width: usize) -> Self {
        Self {
            frame_height: height,
            frame_width: width,
            grid,
            dispersion: Dispersion::spanning(&grid, width),
            psf_sigma: 1.5,
            trace_row: height / 2,
            bias_level: 100.0,
            read_noise_sigma: 5.0,
            sky_level: 10.0,
            background_gradient: 0.05,
            gain: 1.0,
            shot_noise: true,
            hot_pixel_rate: 0.0,
            cosmic_ray_rate: 0.0,
        }
    }

    /// Same geometry with every noise source and all background switched off.
    pub fn noiseless(&self) -> Self {
        Self {
            read_noise_sigma: 0.0,
            sky_level: 0.0,
            background_gradient: 0.0,
            shot_noise: false,
            hot_pixel_rate: 0.0,
            cosmic_ray_rate: 0.0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.frame_height == 0 || self.frame_width == 0 {
            return Err(Error::Config("frame dimensions must be positive".into()));
        }
        if !(self.psf_sigma > 0.0) {
            return Err(Error::Config(format!("psf_sigma must be > 0, got {}", self.psf_sigma)));
        }
        if self.trace_row >= self.frame_height {
            return Err(Error::Config(format!(
                "trace_row {} outside a frame of height {}",
                self.trace_row, self.frame_height
            )));
        }
        let (c0, c1) = (
            self.dispersion.column(self.grid.lambda_min),
            self.dispersion.column(self.grid.lambda_max),
        );
        let w = self.frame_width as f64;
        if !(self.dispersion.px_per_nm > 0.0 && c0 >= 0.0 && c0 < w && c1 >= 0.0 && c1 < w) {
            return Err(Error::Config(format!(
                "dispersion maps the band to columns {c0:.2}..{c1:.2}, outside [0, {w})"
            )));
        }
        let nonneg = [
            ("bias_level", self.bias_level),
            ("read_noise_sigma", self.read_noise_sigma),
            ("sky_level", self.sky_level),
            ("hot_pixel_rate", self.hot_pixel_rate),
            ("cosmic_ray_rate", self.cosmic_ray_rate),
        ];
        if let Some((name, v)) = nonneg.iter().find(|(_, v)| !(*v >= 0.0)) {
            return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
        }
        if !(self.gain > 0.0) {
            return Err(Error::Config(format!("gain must be > 0, got {}", self.gain)));
        }
        Ok(())
    }

    /// DN_med settings matched to this instrument's PSF.
    pub fn dnmed_config(&self) -> DnMedConfig {
        DnMedConfig {
            psf_sigma: self.psf_sigma,
            ..DnMedConfig::default()
        }
    }

    /// Fraction of a column's flux landing in each row: the Gaussian integrated
    /// over each pixel, truncated to `±6 sigma` and renormalized.
    pub fn row_profile(&self) -> Vec<f64> {
        let mu = self.trace_row as f64;
        let s = self.psf_sigma;
        let cdf = |x: f64| 0.5 * libm::erfc(-(x - mu) / (s * std::f64::consts::SQRT_2));
        let (lo, hi) = (mu - 6.0 * s, mu + 6.0 * s);
        let mut p: Vec<f64> = (0..self.frame_height)
            .map(|r| {
                let a = (r as f64 - 0.5).max(lo);
                let b = (r as f64 + 0.5).min(hi);
                if b > a {
                    cdf(b) - cdf(a)
                } else {
                    0.0
                }
            })
            .collect();
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= total);
        p
    }

    /// Per-column photon rate `sed(lambda(column))`.
    pub fn column_flux(&self, sed: &[f64]) -> Result<Vec<f64>> {
        self.grid.check_len("spectral energy distribution", sed.len())?;
        Ok((0..self.frame_width)
            .map(|c| self.grid.interpolate(sed, self.dispersion.wavelength(c as f64)))
            .collect())
    }

    fn background(&self, row: usize) -> f64 {
        (self.sky_level + self.background_gradient * row as f64).max(0.0)
    }
}

fn signal(sed: &[f64], instr: &InstrumentModel, exposure_scale: f64) -> Result<Vec<f64>> {
    instr.validate()?;
    if !(exposure_scale > 0.0 && exposure_scale.is_finite()) {
        return Err(Error::Simulation(format!("exposure scale must be > 0, got {exposure_scale}")));
    }
    let flux = instr.column_flux(sed)?;
    let prof = instr.row_profile();
    let mut px = Vec::with_capacity(instr.frame_height * instr.frame_width);
    for (r, &g) in prof.iter().enumerate() {
        let bg = instr.background(r);
        px.extend(flux.iter().map(|&f| exposure_scale * f * g + bg));
    }
    Ok(px)
}

fn finish(px: Vec<f64>, instr: &InstrumentModel) -> Result<Frame> {
    let px = px
        .into_iter()
        .map(|v| (v + instr.bias_level).max(0.0) as f32 as f64)
        .collect();
    Frame::new(instr.frame_height, instr.frame_width, px)
}

/// Render one exposure: Gaussian strip plus sky, Poisson shot noise in
/// electrons, Gaussian read noise, bias, optional outliers; clipped at zero
/// and rounded to `f32`.
pub fn render_frame<R: Rng + ?Sized>(
    sed: &[f64],
    instr: &InstrumentModel,
    exposure_scale: f64,
    rng: &mut R,
) -> Result<Frame> {
    let mut px = signal(sed, instr, exposure_scale)?;
    if instr.shot_noise {
        for v in px.iter_mut() {
            let electrons = *v * instr.gain;
            *v = if electrons > 0.0 {
                Poisson::new(electrons)
                    .map_err(|e| Error::Simulation(e.to_string()))?
                    .sample(rng)
                    / instr.gain
            } else {
                0.0
            };
        }
    }
    if instr.read_noise_sigma > 0.0 {
        let read = Normal::new(0.0, instr.read_noise_sigma).map_err(|e| Error::Simulation(e.to_string()))?;
        for v in px.iter_mut() {
            *v += read.sample(rng);
        }
    }
    let mut frame = finish(px, instr)?;
    if instr.hot_pixel_rate > 0.0 {
        let n = Poisson::new(instr.hot_pixel_rate)
            .map_err(|e| Error::Simulation(e.to_string()))?
            .sample(rng) as usize;
        inject_hot_pixels(&mut frame, n, OUTLIER_LEVEL, rng);
    }
    if instr.cosmic_ray_rate > 0.0 {
        let n = Poisson::new(instr.cosmic_ray_rate)
            .map_err(|e| Error::Simulation(e.to_string()))?
            .sample(rng) as usize;
        inject_cosmic_rays(&mut frame, n, rng);
    }
    Ok(frame)
}

/// Expected counts without any noise: signal, sky and bias.
pub fn render_noiseless(sed: &[f64], instr: &InstrumentModel, exposure_scale: f64) -> Result<Frame> {
    finish(signal(sed, instr, exposure_scale)?, instr)
}

/// Set `n` distinct random pixels to `value`.
pub fn inject_hot_pixels<R: Rng + ?Sized>(frame: &mut Frame, n: usize, value: f64, rng: &mut R) {
    let n = n.min(frame.pixels.len());
    for i in rand::seq::index::sample(rng, frame.pixels.len(), n) {
        frame.pixels[i] = value;
    }
}

/// Short saturated streaks of one to four pixels along a random direction.
pub fn inject_cosmic_rays<R: Rng + ?Sized>(frame: &mut Frame, n: usize, rng: &mut R) {
    for _ in 0..n {
        let mut r = rng.random_range(0..frame.height) as isize;
        let mut c = rng.random_range(0..frame.width) as isize;
        let (dr, dc) = [(0, 1), (1, 0), (1, 1), (1, -1)][rng.random_range(0..4)];
        for _ in 0..rng.random_range(1..=4) {
            if r < 0 || c < 0 || r >= frame.height as isize || c >= frame.width as isize {
                break;
            }
            frame.pixels[r as usize * frame.width + c as usize] = OUTLIER_LEVEL;
            r += dr;
            c += dc;
        }
    }
}

/// Exposure scale whose noiseless frame has the requested DN_med (to 1%).
pub fn calibrate_exposure(sed: &[f64], instr: &InstrumentModel, target_dnmed: f64) -> Result<f64> {
    if !(target_dnmed > 0.0 && target_dnmed.is_finite()) {
        return Err(Error::Simulation(format!("target DN_med must be > 0, got {target_dnmed}")));
    }
    let clean = instr.noiseless();
    let cfg = instr.dnmed_config();
    let measure = |scale: f64| -> Result<f64> { Ok(dn_med(&render_noiseless(sed, &clean, scale)?, &cfg)?.dnmed) };

    let probe = measure(1.0)?;
    if !(probe > 0.0) {
        return Err(Error::Simulation(
            "cannot reach the target DN_med: the spectrum yields no signal".into(),
        ));
    }
    // noiseless counts are linear in the scale, so one step normally suffices
    let guess = target_dnmed / probe;
    let close = |d: f64| (d - target_dnmed).abs() <= 0.01 * target_dnmed;
    if close(measure(guess)?) {
        return Ok(guess);
    }
    let (mut lo, mut hi) = (guess / 2.0, guess * 2.0);
    while measure(lo)? > target_dnmed {
        lo /= 2.0;
    }
    while measure(hi)? < target_dnmed {
        hi *= 2.0;
        if hi > guess * 1e6 {
            return Err(Error::Simulation("cannot bracket the target DN_med".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let d = measure(mid)?;
        if close(d) {
            return Ok(mid);
        }
        if d < target_dnmed {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Simulation("exposure bisection did not converge".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn ramp(grid: &WavelengthGrid) -> Vec<f64> {
        (0..grid.n_bins).map(|i| 1.0 + (i as f64 * 0.05).sin().abs()).collect()
    }

    #[test]
    fn zero_sed_without_noise_is_pure_bias() {
        let mut instr = InstrumentModel::default().noiseless();
        instr.bias_level = 123.0;
        instr.shot_noise = true;
        let sed = vec![0.0; instr.grid.n_bins];
        let f = render_frame(&sed, &instr, 5.0, &mut rng_from_seed(1)).unwrap();
        assert!(f.pixels.iter().all(|&p| p == 123.0));
    }

    #[test]
    fn column_sums_match_the_column_flux() {
        let mut instr = InstrumentModel::default().noiseless();
        instr.bias_level = 0.0;
        let sed = ramp(&instr.grid);
        let scale = 40.0;
        let f = render_noiseless(&sed, &instr, scale).unwrap();
        let flux = instr.column_flux(&sed).unwrap();
        for c in 0..instr.frame_width {
            let sum: f64 = (0..instr.frame_height).map(|r| f.get(r, c)).sum();
            let want = scale * flux[c];
            assert!((sum - want).abs() <= 1e-6 * want, "column {c}: {sum} vs {want}");
        }
        let total_want = scale * sed.iter().sum::<f64>();
        assert!((f.total() - total_want).abs() <= 1e-4 * total_want);
    }

    #[test]
    fn full_size_geometry_interpolates_the_sed() {
        let mut instr = InstrumentModel::full_size(WavelengthGrid::default()).noiseless();
        instr.bias_level = 0.0;
        instr.validate().unwrap();
        let sed = ramp(&instr.grid);
        let f = render_noiseless(&sed, &instr, 1.0).unwrap();
        assert_eq!((f.height, f.width), (200, 1340));
        let first: f64 = (0..200).map(|r| f.get(r, 0)).sum();
        let last: f64 = (0..200).map(|r| f.get(r, 1339)).sum();
        assert!((first - sed[0]).abs() < 1e-6 * sed[0]);
        assert!((last - sed[335]).abs() < 1e-6 * sed[335]);
    }

    #[test]
    fn rendering_is_deterministic_and_nonnegative() {
        let mut instr = InstrumentModel::default();
        instr.bias_level = 0.0;
        instr.hot_pixel_rate = 3.0;
        instr.cosmic_ray_rate = 2.0;
        let sed = ramp(&instr.grid);
        let a = render_frame(&sed, &instr, 10.0, &mut rng_from_seed(9)).unwrap();
        let b = render_frame(&sed, &instr, 10.0, &mut rng_from_seed(9)).unwrap();
        assert_eq!(a, b);
        assert!(a.pixels.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn calibration_hits_target_and_is_linear() {
        let instr = InstrumentModel::default();
        let sed = ramp(&instr.grid);
        let s100 = calibrate_exposure(&sed, &instr, 100.0).unwrap();
        let d = dn_med(&render_noiseless(&sed, &instr.noiseless(), s100).unwrap(), &instr.dnmed_config())
            .unwrap()
            .dnmed;
        assert!((99.0..=101.0).contains(&d), "{d}");
        let s200 = calibrate_exposure(&sed, &instr, 200.0).unwrap();
        assert!((s200 / s100 - 2.0).abs() <= 0.02);
    }

    #[test]
    fn zero_sed_cannot_be_calibrated() {
        let instr = InstrumentModel::default();
        let err = calibrate_exposure(&vec![0.0; instr.grid.n_bins], &instr, 100.0).unwrap_err();
        assert!(matches!(err, Error::Simulation(_)));
    }

    #[test]
    fn invalid_geometry_is_rejected() {
        let mut instr = InstrumentModel::default();
        instr.trace_row = 64;
        assert!(instr.validate().is_err());
        let mut instr = InstrumentModel::default();
        instr.dispersion.column_ref = 10.0;
        assert!(instr.validate().is_err());
    }
}

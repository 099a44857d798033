//! Median-based background-subtracted signal level of a spectral strip.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::frame::Frame;

/// Which axis the medians are taken along.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DnMedAxis {
    /// Median of each row over columns (the dispersion direction); the
    /// profile runs across the strip.
    #[default]
    AlongDispersion,
    /// Median of each column over rows; the profile runs along the strip.
    AcrossDispersion,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DnMedConfig {
    pub poly_degree: usize,
    /// Cross-dispersion PSF width; the signal window is `±6 sigma` around the peak.
    pub psf_sigma: f64,
    pub axis: DnMedAxis,
}

impl Default for DnMedConfig {
    fn default() -> Self {
        Self {
            poly_degree: 2,
            psf_sigma: 1.5,
            axis: DnMedAxis::AlongDispersion,
        }
    }
}

impl DnMedConfig {
    pub fn half_window(&self) -> usize {
        (6.0 * self.psf_sigma).ceil() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnMedReport {
    pub dnmed: f64,
    pub row_profile: Vec<f64>,
    pub background_fit: Vec<f64>,
    pub poly_degree: usize,
    pub peak_index: usize,
    /// Inclusive index range summed as signal.
    pub window: (usize, usize),
}

/// Median with the two middle values averaged for even lengths. Reorders `v`.
pub fn median_in_place(v: &mut [f64]) -> f64 {
    let n = v.len();
    assert!(n > 0, "median of an empty slice");
    let mid = n / 2;
    let (lower, m, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let m = *m;
    if n % 2 == 1 {
        m
    } else {
        let below = lower.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (below + m)
    }
}

fn profile(frame: &Frame, axis: DnMedAxis) -> Vec<f64> {
    match axis {
        DnMedAxis::AlongDispersion => {
            let mut scratch = vec![0.0; frame.width];
            (0..frame.height)
                .map(|r| {
                    scratch.copy_from_slice(frame.row(r));
                    median_in_place(&mut scratch)
                })
                .collect()
        }
        DnMedAxis::AcrossDispersion => {
            let mut scratch = vec![0.0; frame.height];
            (0..frame.width)
                .map(|c| {
                    for (r, s) in scratch.iter_mut().enumerate() {
                        *s = frame.get(r, c);
                    }
                    median_in_place(&mut scratch)
                })
                .collect()
        }
    }
}

/// Least-squares polynomial through `(x, y)`, evaluated at `at`. Abscissae are
/// mapped to `[-1, 1]` over `[0, span)` for conditioning.
fn polyfit_eval(xs: &[usize], ys: &[f64], degree: usize, span: usize, at: impl Iterator<Item = usize>) -> Result<Vec<f64>> {
    let half = (span.max(2) - 1) as f64 / 2.0;
    let t = |x: usize| (x as f64 - half) / half;
    let cols = degree + 1;
    let a = DMatrix::from_fn(xs.len(), cols, |i, j| t(xs[i]).powi(j as i32));
    let b = DVector::from_column_slice(ys);
    let coeffs = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|e| Error::Numerical(format!("background fit failed: {e}")))?;
    Ok(at
        .map(|x| {
            let tx = t(x);
            // Horner
            coeffs.iter().rev().fold(0.0, |acc, c| acc * tx + c)
        })
        .collect())
}

/// Signal level of a frame: the median profile minus a polynomial background
/// fitted outside the signal window, summed over the window.
pub fn dn_med(frame: &Frame, cfg: &DnMedConfig) -> Result<DnMedReport> {
    if !(cfg.psf_sigma > 0.0) {
        return Err(Error::Config(format!("psf_sigma must be > 0, got {}", cfg.psf_sigma)));
    }
    let prof = profile(frame, cfg.axis);
    let n = prof.len();
    let peak = prof
        .iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > prof[best] { i } else { best });
    let hw = cfg.half_window();
    let lo = peak.saturating_sub(hw);
    let hi = (peak + hw).min(n - 1);
    let background: Vec<usize> = (0..n).filter(|&i| i < lo || i > hi).collect();
    if cfg.poly_degree >= background.len() {
        return Err(Error::Config(format!(
            "polynomial degree {} needs more than {} background samples outside the signal window",
            cfg.poly_degree,
            background.len()
        )));
    }
    let ys: Vec<f64> = background.iter().map(|&i| prof[i]).collect();
    let fit = polyfit_eval(&background, &ys, cfg.poly_degree, n, 0..n)?;
    let dnmed: f64 = (lo..=hi).map(|i| prof[i] - fit[i]).sum();
    if !dnmed.is_finite() {
        return Err(Error::Numerical("DN_med is not finite".into()));
    }
    Ok(DnMedReport {
        dnmed,
        row_profile: prof,
        background_fit: fit,
        poly_degree: cfg.poly_degree,
        peak_index: peak,
        window: (lo, hi),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_handles_odd_and_even() {
        assert_eq!(median_in_place(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median_in_place(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(median_in_place(&mut [7.0]), 7.0);
    }

    #[test]
    fn uniform_frame_has_zero_signal() {
        let f = Frame::filled(64, 336, 100.0).unwrap();
        let r = dn_med(&f, &DnMedConfig::default()).unwrap();
        assert!(r.dnmed.abs() < 1e-9, "{}", r.dnmed);
    }

    #[test]
    fn polynomial_background_is_removed_exactly() {
        let (h, w) = (40, 20);
        let mut px = vec![0.0; h * w];
        for r in 0..h {
            let bg = 50.0 + 0.7 * r as f64 - 0.01 * (r as f64).powi(2);
            let sig = if r == 20 { 30.0 } else { 0.0 };
            for c in 0..w {
                px[r * w + c] = bg + sig;
            }
        }
        let f = Frame::new(h, w, px).unwrap();
        let rep = dn_med(&f, &DnMedConfig::default()).unwrap();
        assert_eq!(rep.peak_index, 20);
        assert!((rep.dnmed - 30.0).abs() < 1e-9);
    }

    #[test]
    fn too_high_degree_is_a_configuration_error() {
        let mut px = vec![1.0; 20 * 5];
        px[10 * 5..11 * 5].fill(9.0);
        let f = Frame::new(20, 5, px).unwrap();
        let cfg = DnMedConfig {
            poly_degree: 2,
            ..Default::default()
        };
        // the window around row 10 covers rows 1..=19, leaving one row for the fit
        assert!(matches!(dn_med(&f, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn alternate_axis_runs_on_the_transpose() {
        let (h, w) = (30, 40);
        let mut px = vec![10.0; h * w];
        for r in 0..h {
            px[r * w + 20] += 5.0;
        }
        let f = Frame::new(h, w, px).unwrap();
        let cfg = DnMedConfig {
            axis: DnMedAxis::AcrossDispersion,
            ..Default::default()
        };
        let rep = dn_med(&f, &cfg).unwrap();
        assert_eq!(rep.row_profile.len(), w);
        assert!((rep.dnmed - 5.0).abs() < 1e-9);
    }
}

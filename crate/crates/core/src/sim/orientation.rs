use std::f64::consts::{PI, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Attitude of a satellite as a direction on the unit sphere: polar angle
/// `theta` in `[0, pi]`, azimuth `phi` in `[0, 2 pi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Orientation {
    pub theta: f64,
    pub phi: f64,
}

impl From<[f64; 2]> for Orientation {
    fn from([theta, phi]: [f64; 2]) -> Self {
        Self { theta, phi }
    }
}

impl From<Orientation> for [f64; 2] {
    fn from(o: Orientation) -> Self {
        [o.theta, o.phi]
    }
}

impl Orientation {
    /// Reference attitude of the nadir policy.
    pub const NADIR: Orientation = Orientation {
        theta: PI / 3.0,
        phi: PI / 4.0,
    };

    pub fn unit_vector(&self) -> [f64; 3] {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        [st * cp, st * sp, ct]
    }

    pub fn from_unit_vector(v: [f64; 3]) -> Self {
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let z = (v[2] / norm).clamp(-1.0, 1.0);
        let mut phi = v[1].atan2(v[0]);
        if phi < 0.0 {
            phi += TAU;
        }
        if phi >= TAU {
            phi -= TAU;
        }
        Self { theta: z.acos(), phi }
    }

    /// Great-circle angle to `other`, radians.
    pub fn angle_to(&self, other: &Orientation) -> f64 {
        let (a, b) = (self.unit_vector(), other.unit_vector());
        let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        dot.clamp(-1.0, 1.0).acos()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrientationPolicy {
    /// Fixed Earth-pointing attitude with small jitter.
    Nadir,
    /// Independent area-uniform attitude per exposure.
    Random,
}

impl std::fmt::Display for OrientationPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OrientationPolicy::Nadir => "nadir",
            OrientationPolicy::Random => "random",
        })
    }
}

/// Draw an attitude. Nadir returns [`Orientation::NADIR`] rotated by an
/// angle uniform in `[0, jitter_deg]` toward a uniformly random tangent
/// direction; random returns a draw uniform in area on the sphere.
pub fn sample_orientation<R: Rng + ?Sized>(policy: OrientationPolicy, jitter_deg: f64, rng: &mut R) -> Orientation {
    match policy {
        OrientationPolicy::Random => {
            let z: f64 = rng.random_range(-1.0..=1.0);
            let phi: f64 = rng.random_range(0.0..TAU);
            Orientation { theta: z.acos(), phi }
        }
        OrientationPolicy::Nadir => {
            let jitter = jitter_deg.max(0.0).to_radians();
            if jitter == 0.0 {
                return Orientation::NADIR;
            }
            let delta: f64 = rng.random_range(0.0..=jitter);
            let alpha: f64 = rng.random_range(0.0..TAU);
            let v = Orientation::NADIR.unit_vector();
            // orthonormal tangent basis at v
            let (st, ct) = Orientation::NADIR.theta.sin_cos();
            let (sp, cp) = Orientation::NADIR.phi.sin_cos();
            let e_theta = [ct * cp, ct * sp, -st];
            let e_phi = [-sp, cp, 0.0];
            let (sa, ca) = alpha.sin_cos();
            let (sd, cd) = delta.sin_cos();
            let w = [0, 1, 2].map(|k| cd * v[k] + sd * (ca * e_theta[k] + sa * e_phi[k]));
            Orientation::from_unit_vector(w)
        }
    }
}

/// Number of real spherical harmonic coefficients through degree 2.
pub const SH_COEFFS: usize = 9;

/// Real orthonormal spherical harmonics `Y_lm` for `l <= 2`, ordered
/// `(0,0), (1,-1), (1,0), (1,1), (2,-2), (2,-1), (2,0), (2,1), (2,2)`.
pub fn real_spherical_harmonics(o: &Orientation) -> [f64; SH_COEFFS] {
    let [x, y, z] = o.unit_vector();
    let c0 = 0.5 * (1.0 / PI).sqrt();
    let c1 = (3.0 / (4.0 * PI)).sqrt();
    let c2 = 0.5 * (15.0 / PI).sqrt();
    let c20 = 0.25 * (5.0 / PI).sqrt();
    [
        c0,
        c1 * y,
        c1 * z,
        c1 * x,
        c2 * x * y,
        c2 * y * z,
        c20 * (3.0 * z * z - 1.0),
        c2 * x * z,
        0.5 * c2 * (x * x - y * y),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn nadir_without_jitter_is_exact() {
        let mut rng = rng_from_seed(1);
        for _ in 0..10 {
            assert_eq!(sample_orientation(OrientationPolicy::Nadir, 0.0, &mut rng), Orientation::NADIR);
        }
    }

    #[test]
    fn nadir_jitter_is_bounded() {
        let mut rng = rng_from_seed(2);
        let jitter = 1.0;
        for _ in 0..10_000 {
            let o = sample_orientation(OrientationPolicy::Nadir, jitter, &mut rng);
            assert!(o.angle_to(&Orientation::NADIR) <= jitter.to_radians() + 1e-12);
            assert!((0.0..=PI).contains(&o.theta) && (0.0..TAU).contains(&o.phi));
        }
    }

    #[test]
    fn random_policy_is_deterministic_under_seed() {
        let a = sample_orientation(OrientationPolicy::Random, 0.0, &mut rng_from_seed(7));
        let b = sample_orientation(OrientationPolicy::Random, 0.0, &mut rng_from_seed(7));
        assert_eq!(a, b);
    }

    #[test]
    fn random_policy_is_area_uniform() {
        // cos(theta) ~ U(-1, 1): mean 0, sd 1/sqrt(3)
        let n = 100_000;
        let mut rng = rng_from_seed(99);
        let mean = (0..n)
            .map(|_| sample_orientation(OrientationPolicy::Random, 0.0, &mut rng).theta.cos())
            .sum::<f64>()
            / n as f64;
        let sigma = (1.0f64 / 3.0).sqrt() / (n as f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma, "mean cos theta {mean}");
    }

    #[test]
    fn harmonics_are_orthonormal_by_quadrature() {
        // midpoint quadrature in (cos theta, phi)
        let (nz, np) = (200, 200);
        let mut gram = [[0.0; SH_COEFFS]; SH_COEFFS];
        for i in 0..nz {
            let z = -1.0 + (i as f64 + 0.5) * 2.0 / nz as f64;
            for j in 0..np {
                let phi = (j as f64 + 0.5) * TAU / np as f64;
                let y = real_spherical_harmonics(&Orientation { theta: z.acos(), phi });
                let w = (2.0 / nz as f64) * (TAU / np as f64);
                for a in 0..SH_COEFFS {
                    for b in 0..SH_COEFFS {
                        gram[a][b] += w * y[a] * y[b];
                    }
                }
            }
        }
        for a in 0..SH_COEFFS {
            for b in 0..SH_COEFFS {
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((gram[a][b] - want).abs() < 1e-3, "({a},{b}) = {}", gram[a][b]);
            }
        }
    }

    #[test]
    fn unit_vector_round_trip() {
        let mut rng = rng_from_seed(5);
        for _ in 0..1000 {
            let o = sample_orientation(OrientationPolicy::Random, 0.0, &mut rng);
            let back = Orientation::from_unit_vector(o.unit_vector());
            assert!(o.angle_to(&back) < 1e-7);
        }
    }
}

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};

use super::{GeometryError, Vec3};

/// Pole guard used in the elevation angle.
pub const DEFAULT_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalCoord {
    pub r: f64,
    /// Azimuth in [-π, π).
    pub theta: f64,
    /// Elevation in [-π/2, π/2].
    pub phi: f64,
}

pub fn to_spherical(p: &Vec3, epsilon: f64) -> SphericalCoord {
    let r = p.norm();
    let mut theta = p.y.atan2(p.x);
    if theta >= PI {
        theta -= TAU;
    }
    let phi = p.z.atan2((p.x * p.x + p.y * p.y + epsilon).sqrt());
    SphericalCoord { r, theta, phi }
}

pub fn from_spherical(s: &SphericalCoord) -> Vec3 {
    let (st, ct) = s.theta.sin_cos();
    let (sp, cp) = s.phi.sin_cos();
    Vec3::new(s.r * cp * ct, s.r * cp * st, s.r * sp)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VoxelIndex {
    pub i_r: u32,
    pub i_theta: u32,
    pub i_phi: u32,
}

impl VoxelIndex {
    pub fn new(i_r: u32, i_theta: u32, i_phi: u32) -> Self {
        Self { i_r, i_theta, i_phi }
    }
}

/// Bounds and bin sizes of the robot-centric spherical grid.
///
/// The azimuth axis always spans a full turn split into `n_theta` bins; the
/// elevation axis spans `[phi_0, π/2]` and must hold a whole number of bins.
/// Radii at or beyond `r_max` land in the last shell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub r_min: f64,
    pub r_max: f64,
    pub delta_r: f64,
    pub n_theta: u32,
    pub delta_phi: f64,
    pub theta_0: f64,
    pub phi_0: f64,
    pub epsilon: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            r_min: 0.2,
            r_max: 50.0,
            delta_r: 0.5,
            n_theta: 180,
            delta_phi: 2f64.to_radians(),
            theta_0: -PI,
            phi_0: -FRAC_PI_2,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl GridSpec {
    /// Builds a spec from an azimuth bin size, with `N_θ = ⌊2π/Δθ⌋`.
    pub fn from_bin_sizes(
        r_min: f64,
        r_max: f64,
        delta_r: f64,
        delta_theta: f64,
        delta_phi: f64,
    ) -> Result<Self, GeometryError> {
        if !(delta_theta > 0.0) {
            return Err(GeometryError::InvalidGrid("delta_theta must be positive".into()));
        }
        let spec = Self {
            r_min,
            r_max,
            delta_r,
            n_theta: (TAU / delta_theta).floor() as u32,
            delta_phi,
            ..Self::default()
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: &str| Err(GeometryError::InvalidGrid(m.to_string()));
        if !(self.r_min >= 0.0 && self.r_min < self.r_max && self.r_max.is_finite()) {
            return bad("require 0 <= r_min < r_max");
        }
        if !(self.delta_r > 0.0) {
            return bad("delta_r must be positive");
        }
        if self.n_theta == 0 {
            return bad("n_theta must be >= 1");
        }
        if !(self.delta_phi > 0.0) {
            return bad("delta_phi must be positive");
        }
        if !(self.phi_0 >= -FRAC_PI_2 - 1e-12 && self.phi_0 < FRAC_PI_2) {
            return bad("phi_0 must lie in [-pi/2, pi/2)");
        }
        let bins = (FRAC_PI_2 - self.phi_0) / self.delta_phi;
        if (bins - bins.round()).abs() > 1e-9 || bins.round() < 1.0 {
            return bad("elevation range must hold a whole number of bins");
        }
        if !(self.epsilon >= 0.0) {
            return bad("epsilon must be non-negative");
        }
        Ok(())
    }

    pub fn n_r(&self) -> u32 {
        ((self.r_max - self.r_min) / self.delta_r).ceil() as u32
    }

    pub fn n_phi(&self) -> u32 {
        ((FRAC_PI_2 - self.phi_0) / self.delta_phi).round() as u32
    }

    pub fn delta_theta(&self) -> f64 {
        TAU / self.n_theta as f64
    }

    pub fn contains(&self, i: &VoxelIndex) -> bool {
        i.i_r < self.n_r() && i.i_theta < self.n_theta && i.i_phi < self.n_phi()
    }

    /// Radius of the bin center of shell `i_r`.
    pub fn shell_center(&self, i_r: u32) -> f64 {
        self.r_min + (i_r as f64 + 0.5) * self.delta_r
    }

    pub fn elevation_center(&self, i_phi: u32) -> f64 {
        self.phi_0 + (i_phi as f64 + 0.5) * self.delta_phi
    }

    pub fn azimuth_center(&self, i_theta: u32) -> f64 {
        self.theta_0 + (i_theta as f64 + 0.5) * self.delta_theta()
    }

    /// Length of the voxel diagonal at radius `r`.
    pub fn diagonal_at(&self, r: f64) -> f64 {
        let a = r * self.delta_theta();
        let b = r * self.delta_phi;
        (self.delta_r * self.delta_r + a * a + b * b).sqrt()
    }
}

pub fn voxel_index(s: &SphericalCoord, g: &GridSpec) -> Result<VoxelIndex, GeometryError> {
    if !(s.r >= g.r_min) {
        return Err(GeometryError::OutOfRange);
    }
    let n_phi = g.n_phi();
    let phi_rel = s.phi - g.phi_0;
    if !(phi_rel >= 0.0) || s.phi > FRAC_PI_2 {
        return Err(GeometryError::OutOfRange);
    }
    let n_r = g.n_r();
    let i_r = (((s.r - g.r_min) / g.delta_r).floor() as u64).min(n_r as u64 - 1) as u32;
    let turns = (s.theta - g.theta_0).rem_euclid(TAU) / TAU;
    // rem_euclid can round up to exactly TAU for tiny negative inputs.
    let i_theta = ((turns * g.n_theta as f64).floor() as u64).min(g.n_theta as u64 - 1) as u32;
    // φ = π/2 is inside the closed elevation range and belongs to the top bin.
    let i_phi = ((phi_rel / g.delta_phi).floor() as u64).min(n_phi as u64 - 1) as u32;
    Ok(VoxelIndex { i_r, i_theta, i_phi })
}

/// Approximate volume `r² cos φ Δr Δθ Δφ` of a spherical cell.
pub fn spherical_cell_volume(r: f64, phi: f64, delta_r: f64, delta_theta: f64, delta_phi: f64) -> f64 {
    r * r * phi.cos() * delta_r * delta_theta * delta_phi
}

/// Volume of a voxel, evaluated at its bin center.
pub fn voxel_volume(i: &VoxelIndex, g: &GridSpec) -> f64 {
    spherical_cell_volume(
        g.shell_center(i.i_r),
        g.elevation_center(i.i_phi),
        g.delta_r,
        g.delta_theta(),
        g.delta_phi,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use approx::assert_abs_diff_eq;

    fn example_grid() -> GridSpec {
        GridSpec {
            r_min: 0.0,
            r_max: 10.0,
            delta_r: 1.0,
            n_theta: 4,
            delta_phi: PI / 4.0,
            theta_0: -PI,
            phi_0: -FRAC_PI_2,
            epsilon: 0.0,
        }
    }

    #[test]
    fn axis_points() {
        let s = to_spherical(&Vec3::new(1.0, 0.0, 0.0), DEFAULT_EPSILON);
        assert_eq!((s.r, s.theta), (1.0, 0.0));
        assert_abs_diff_eq!(s.phi, 0.0);
        let s = to_spherical(&Vec3::new(0.0, 1.0, 0.0), DEFAULT_EPSILON);
        assert_eq!(s.r, 1.0);
        assert_abs_diff_eq!(s.theta, FRAC_PI_2, epsilon = 1e-15);
        assert_abs_diff_eq!(s.phi, 0.0);
    }

    #[test]
    fn diagonal_point() {
        let s = to_spherical(&Vec3::new(1.0, 1.0, 1.0), 0.0);
        assert_abs_diff_eq!(s.r, 3f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(s.theta, PI / 4.0, epsilon = 1e-15);
        // atan(1/√2)
        assert_abs_diff_eq!(s.phi, 0.615_479_708_670_387_3, epsilon = 1e-12);
    }

    #[test]
    fn azimuth_half_open() {
        let s = to_spherical(&Vec3::new(-1.0, 0.0, 0.0), 0.0);
        assert_eq!(s.theta, -PI);
        let s = to_spherical(&Vec3::new(-1.0, -0.0, 0.0), 0.0);
        assert_eq!(s.theta, -PI);
    }

    #[test]
    fn pole_is_guarded() {
        let s = to_spherical(&Vec3::new(0.0, 0.0, 2.0), DEFAULT_EPSILON);
        assert!(s.phi < FRAC_PI_2 && s.phi > FRAC_PI_2 - 1e-3);
        let s = to_spherical(&Vec3::zeros(), DEFAULT_EPSILON);
        assert_eq!((s.r, s.phi), (0.0, 0.0));
    }

    #[test]
    fn round_trip_spherical() {
        let mut rng = SplitMix64::new(5);
        for _ in 0..1000 {
            let s = SphericalCoord {
                r: rng.uniform(1e-3, 100.0),
                theta: rng.uniform(-PI, PI),
                phi: rng.uniform(-FRAC_PI_2 + 1e-3, FRAC_PI_2 - 1e-3),
            };
            let back = to_spherical(&from_spherical(&s), 0.0);
            assert_abs_diff_eq!(back.r, s.r, epsilon = 1e-9);
            assert_abs_diff_eq!(back.theta, s.theta, epsilon = 1e-9);
            assert_abs_diff_eq!(back.phi, s.phi, epsilon = 1e-9);
        }
    }

    #[test]
    fn lower_bound_maps_to_origin_cell() {
        let g = GridSpec::default();
        let s = SphericalCoord { r: g.r_min, theta: g.theta_0, phi: g.phi_0 };
        assert_eq!(voxel_index(&s, &g).unwrap(), VoxelIndex::new(0, 0, 0));
    }

    #[test]
    fn hand_evaluated_index() {
        let s = SphericalCoord { r: 2.5, theta: 0.0, phi: 0.0 };
        assert_eq!(voxel_index(&s, &example_grid()).unwrap(), VoxelIndex::new(2, 2, 2));
    }

    #[test]
    fn near_radius_rejected_far_radius_clamped() {
        let g = GridSpec::default();
        let near = SphericalCoord { r: 0.1, theta: 0.0, phi: 0.0 };
        assert_eq!(voxel_index(&near, &g), Err(GeometryError::OutOfRange));
        let far = SphericalCoord { r: 1e4, theta: 0.0, phi: 0.0 };
        assert_eq!(voxel_index(&far, &g).unwrap().i_r, g.n_r() - 1);
        let edge = SphericalCoord { r: g.r_max, theta: 0.0, phi: 0.0 };
        assert_eq!(voxel_index(&edge, &g).unwrap().i_r, g.n_r() - 1);
    }

    #[test]
    fn elevation_bounds() {
        let g = GridSpec { phi_0: 0.0, ..example_grid() };
        let below = SphericalCoord { r: 1.0, theta: 0.0, phi: -0.1 };
        assert_eq!(voxel_index(&below, &g), Err(GeometryError::OutOfRange));
        let top = SphericalCoord { r: 1.0, theta: 0.0, phi: FRAC_PI_2 };
        assert_eq!(voxel_index(&top, &g).unwrap().i_phi, g.n_phi() - 1);
    }

    #[test]
    fn boundary_belongs_to_upper_bin() {
        let g = example_grid();
        let s = SphericalCoord { r: 3.0, theta: -FRAC_PI_2, phi: -PI / 4.0 };
        assert_eq!(voxel_index(&s, &g).unwrap(), VoxelIndex::new(3, 1, 1));
    }

    fn scan(v: f64, lo: f64, step: f64, n: u32) -> Option<u32> {
        (0..n).find(|&i| {
            let a = lo + i as f64 * step;
            let b = lo + (i + 1) as f64 * step;
            v >= a && v < b
        })
    }

    #[test]
    fn matches_bin_scan_oracle() {
        let g = GridSpec::default();
        let mut rng = SplitMix64::new(11);
        for _ in 0..10_000 {
            let s = SphericalCoord {
                r: rng.uniform(g.r_min, g.r_max),
                theta: rng.uniform(-PI, PI),
                phi: rng.uniform(-FRAC_PI_2, FRAC_PI_2),
            };
            let got = voxel_index(&s, &g).unwrap();
            let i_r = scan(s.r, g.r_min, g.delta_r, g.n_r()).unwrap();
            let i_theta = scan(s.theta, g.theta_0, g.delta_theta(), g.n_theta).unwrap();
            let i_phi = scan(s.phi, g.phi_0, g.delta_phi, g.n_phi()).unwrap();
            assert_eq!(got, VoxelIndex::new(i_r, i_theta, i_phi), "{s:?}");
        }
    }

    #[test]
    fn volume_formula() {
        assert_abs_diff_eq!(spherical_cell_volume(1.0, 0.0, 1.0, 0.1, 0.1), 0.01, epsilon = 1e-15);
        let v1 = spherical_cell_volume(2.0, 0.0, 0.5, 0.1, 0.1);
        let v2 = spherical_cell_volume(4.0, 0.0, 0.5, 0.1, 0.1);
        assert_abs_diff_eq!(v2 / v1, 4.0, epsilon = 1e-12);
        assert!(spherical_cell_volume(1.0, FRAC_PI_2, 1.0, 0.1, 0.1).abs() < 1e-16);
    }

    #[test]
    fn shell_volume_ratio_tends_to_four() {
        let g = GridSpec::default();
        let ratio = |k: u32| {
            voxel_volume(&VoxelIndex::new(2 * k, 0, 40), &g)
                / voxel_volume(&VoxelIndex::new(k, 0, 40), &g)
        };
        let mut prev_gap = f64::INFINITY;
        for k in [1, 4, 16, 48] {
            let gap = (ratio(k) - 4.0).abs();
            assert!(gap < prev_gap);
            prev_gap = gap;
        }
        assert!(prev_gap < 0.1);
    }

    #[test]
    fn spec_validation() {
        assert!(GridSpec::default().validate().is_ok());
        assert_eq!(GridSpec::default().n_phi(), 90);
        assert_eq!(GridSpec::default().n_r(), 100);
        let bad = GridSpec { delta_phi: 0.3, ..GridSpec::default() };
        assert!(bad.validate().is_err());
        let bad = GridSpec { r_min: 5.0, r_max: 1.0, ..GridSpec::default() };
        assert!(bad.validate().is_err());
        let g = GridSpec::from_bin_sizes(0.0, 1.0, 0.1, 0.1, PI / 10.0).unwrap();
        assert_eq!(g.n_theta, 62);
    }
}

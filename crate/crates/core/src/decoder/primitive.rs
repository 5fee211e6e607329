use crate::geometry::{quat_normalize, quat_to_matrix, Mat3, Quat, Vec3};

/// Zeroth-order real SH constant `1 / (2√π)`.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;
/// First-order real SH constant `√3 / (2√π)`.
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const MAX_SH_DEGREE: u8 = 2;
/// Non-DC coefficients per channel at the maximum degree.
pub const MAX_SH_REST: usize = 8;

pub fn sh_rest_count(degree: u8) -> usize {
    let b = (degree as usize + 1) * (degree as usize + 1);
    b - 1
}

pub fn rgb2sh(c: f64) -> f64 {
    (c - 0.5) / SH_C0
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One 3D Gaussian. Fields hold exactly the values that are serialized:
/// log-scales and the opacity logit rather than their activations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPrimitive {
    pub mean: [f32; 3],
    pub log_scale: [f32; 3],
    /// Unit quaternion (w, x, y, z).
    pub rotation: [f32; 4],
    pub opacity_logit: f32,
    pub sh_dc: [f32; 3],
    /// Higher-order coefficients, `sh_rest[k][channel]`; entries beyond the
    /// set's degree are zero.
    pub sh_rest: [[f32; 3]; MAX_SH_REST],
}

impl Default for GaussianPrimitive {
    fn default() -> Self {
        Self {
            mean: [0.0; 3],
            log_scale: [0.0; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity_logit: 0.0,
            sh_dc: [0.0; 3],
            sh_rest: [[0.0; 3]; MAX_SH_REST],
        }
    }
}

fn arr3(v: [f64; 3]) -> [f32; 3] {
    [v[0] as f32, v[1] as f32, v[2] as f32]
}

impl GaussianPrimitive {
    pub fn from_f64(
        mean: Vec3,
        log_scale: [f64; 3],
        rotation: Quat,
        opacity_logit: f64,
        sh_dc: [f64; 3],
        sh_rest: &[[f64; 3]],
    ) -> Self {
        let mut rest = [[0.0f32; 3]; MAX_SH_REST];
        for (dst, src) in rest.iter_mut().zip(sh_rest) {
            *dst = arr3(*src);
        }
        Self {
            mean: arr3([mean.x, mean.y, mean.z]),
            log_scale: arr3(log_scale),
            rotation: [rotation[0] as f32, rotation[1] as f32, rotation[2] as f32, rotation[3] as f32],
            opacity_logit: opacity_logit as f32,
            sh_dc: arr3(sh_dc),
            sh_rest: rest,
        }
    }

    pub fn position(&self) -> Vec3 {
        Vec3::new(self.mean[0] as f64, self.mean[1] as f64, self.mean[2] as f64)
    }

    pub fn scale(&self) -> [f64; 3] {
        self.log_scale.map(|l| (l as f64).exp())
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit as f64)
    }

    /// Rotation renormalized in f64; identity if degenerate.
    pub fn quaternion(&self) -> Quat {
        let q = self.rotation.map(|v| v as f64);
        quat_normalize(q).unwrap_or([1.0, 0.0, 0.0, 0.0])
    }

    pub fn covariance(&self) -> Mat3 {
        build_covariance(self.scale(), self.quaternion())
    }

    /// SH-decoded color without view dependence.
    pub fn base_color(&self) -> [f64; 3] {
        self.sh_dc.map(|d| (SH_C0 * d as f64 + 0.5).clamp(0.0, 1.0))
    }

    pub fn is_finite(&self) -> bool {
        self.mean
            .iter()
            .chain(&self.log_scale)
            .chain(&self.rotation)
            .chain(std::iter::once(&self.opacity_logit))
            .chain(&self.sh_dc)
            .chain(self.sh_rest.iter().flatten())
            .all(|v| v.is_finite())
    }
}

/// `Σ = R diag(s)² Rᵀ`.
pub fn build_covariance(scale: [f64; 3], q: Quat) -> Mat3 {
    let r = quat_to_matrix(q);
    let d = Mat3::from_diagonal(&Vec3::new(scale[0] * scale[0], scale[1] * scale[1], scale[2] * scale[2]));
    let s = r * d * r.transpose();
    // Symmetrize away rounding.
    (s + s.transpose()) * 0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SetKind {
    /// Output of a single full decode.
    Full,
    /// Frame-invariant static content.
    Shared,
    /// Per-frame dynamic content.
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Provenance {
    pub frame_id: u32,
    pub kind: SetKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSet {
    pub primitives: Vec<GaussianPrimitive>,
    pub sh_degree: u8,
    pub provenance: Provenance,
}

impl GaussianSet {
    pub fn new(sh_degree: u8, provenance: Provenance) -> Self {
        Self { primitives: Vec::new(), sh_degree, provenance }
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn sh_rest_count(&self) -> usize {
        sh_rest_count(self.sh_degree)
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.primitives.iter().map(|p| p.position()).collect()
    }

    /// Concatenation; the receiver's provenance is kept.
    pub fn extend_from(&mut self, other: &GaussianSet) {
        assert_eq!(self.sh_degree, other.sh_degree, "SH degree mismatch");
        self.primitives.extend_from_slice(&other.primitives);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::quat_from_axis_angle;
    use approx::assert_relative_eq;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;

    #[test]
    fn covariance_identity_rotation() {
        let c = build_covariance([0.1, 0.2, 0.3], [1.0, 0.0, 0.0, 0.0]);
        assert_relative_eq!(c, Mat3::from_diagonal(&Vec3::new(0.01, 0.04, 0.09)), epsilon = 1e-15);
    }

    #[test]
    fn covariance_rz90_swaps_axes() {
        let q = quat_from_axis_angle(Vec3::z(), std::f64::consts::FRAC_PI_2);
        let c = build_covariance([0.1, 0.2, 0.3], q);
        assert_relative_eq!(c, Mat3::from_diagonal(&Vec3::new(0.04, 0.01, 0.09)), epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn covariance_valid(
            s in prop::array::uniform3(1e-3f64..2.0),
            axis in prop::array::uniform3(-1.0f64..1.0),
            angle in -3.2f64..3.2,
        ) {
            let axis = Vec3::from(axis);
            prop_assume!(axis.norm() > 1e-3);
            let c = build_covariance(s, quat_from_axis_angle(axis, angle));
            prop_assert!((c - c.transpose()).norm() == 0.0);
            let mut eig: Vec<f64> = SymmetricEigen::new(c).eigenvalues.iter().copied().collect();
            prop_assert!(eig.iter().all(|&e| e >= -1e-10));
            eig.sort_by(f64::total_cmp);
            let mut sorted = s;
            sorted.sort_by(f64::total_cmp);
            for (e, s) in eig.iter().zip(sorted) {
                prop_assert!((e.max(0.0).sqrt() - s).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rgb2sh_examples() {
        assert_eq!(rgb2sh(0.5), 0.0);
        // 0.5 / C0 = √π
        assert_relative_eq!(rgb2sh(1.0), std::f64::consts::PI.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(rgb2sh(1.0), 1.7725, epsilon = 1e-4);
        assert_relative_eq!(SH_C0, 0.5 / std::f64::consts::PI.sqrt(), epsilon = 1e-16);
        assert_relative_eq!(SH_C1, (3.0f64).sqrt() / (2.0 * std::f64::consts::PI.sqrt()), epsilon = 1e-16);
    }

    #[test]
    fn rest_counts() {
        assert_eq!(sh_rest_count(0), 0);
        assert_eq!(sh_rest_count(1), 3);
        assert_eq!(sh_rest_count(2), 8);
    }

    #[test]
    fn activations() {
        let p = GaussianPrimitive { opacity_logit: 0.0, log_scale: [0.0, (2.0f64).ln() as f32, -1.0], ..Default::default() };
        assert_eq!(p.opacity(), 0.5);
        assert_relative_eq!(p.scale()[1], 2.0, epsilon = 1e-6);
        assert_relative_eq!(logit(sigmoid(1.3)), 1.3, epsilon = 1e-12);
    }
}

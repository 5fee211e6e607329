use nalgebra::{Rotation3, UnitQuaternion, SVD};

use super::{GeometryError, Mat3, Vec3};
use crate::spatial::KdTree;

/// Similarity transform `p ↦ s·R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sim3Transform {
    pub scale: f64,
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vec3,
}

impl Default for Sim3Transform {
    fn default() -> Self {
        Self::identity()
    }
}

impl Sim3Transform {
    pub fn identity() -> Self {
        Self { scale: 1.0, rotation: UnitQuaternion::identity(), translation: Vec3::zeros() }
    }

    pub fn new(scale: f64, rotation: UnitQuaternion<f64>, translation: Vec3) -> Self {
        Self { scale, rotation, translation }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.scale * (self.rotation * p) + self.translation
    }

    pub fn apply_all(&self, points: &[Vec3]) -> Vec<Vec3> {
        points.iter().map(|p| self.apply(p)).collect()
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Sim3Transform) -> Sim3Transform {
        Sim3Transform {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.apply(&other.translation),
        }
    }

    pub fn inverse(&self) -> Sim3Transform {
        let rot = self.rotation.inverse();
        Sim3Transform {
            scale: 1.0 / self.scale,
            rotation: rot,
            translation: -(rot * self.translation) / self.scale,
        }
    }
}

fn centroid(points: &[Vec3]) -> Vec3 {
    points.iter().fold(Vec3::zeros(), |acc, p| acc + p) / points.len() as f64
}

/// Least-squares similarity mapping `source` onto `target` (Umeyama).
pub fn umeyama_align(source: &[Vec3], target: &[Vec3]) -> Result<Sim3Transform, GeometryError> {
    if source.len() != target.len() {
        return Err(GeometryError::Degenerate("source and target sizes differ"));
    }
    if source.len() < 3 {
        return Err(GeometryError::Degenerate("need at least three correspondences"));
    }
    let n = source.len() as f64;
    let mu_x = centroid(source);
    let mu_y = centroid(target);

    let mut scatter = Mat3::zeros();
    let mut cross = Mat3::zeros();
    let mut var_x = 0.0;
    for (x, y) in source.iter().zip(target) {
        let dx = x - mu_x;
        let dy = y - mu_y;
        scatter += dx * dx.transpose();
        cross += dy * dx.transpose();
        var_x += dx.norm_squared();
    }
    scatter /= n;
    cross /= n;
    var_x /= n;

    let mut eig: Vec<f64> = scatter.symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    if !(eig[0] > 1e-300) || eig[1] <= 1e-12 * eig[0] {
        return Err(GeometryError::Degenerate("source points are coincident or collinear"));
    }

    let svd = SVD::new(cross, true, true);
    let u = svd.u.ok_or(GeometryError::Degenerate("svd failed"))?;
    let v_t = svd.v_t.ok_or(GeometryError::Degenerate("svd failed"))?;
    let d = svd.singular_values;
    let mut sign = Vec3::new(1.0, 1.0, 1.0);
    if u.determinant() * v_t.determinant() < 0.0 {
        sign.z = -1.0;
    }
    let rot = u * Mat3::from_diagonal(&sign) * v_t;
    let scale = (d.x * sign.x + d.y * sign.y + d.z * sign.z) / var_x;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(GeometryError::Degenerate("target collapses to a point"));
    }
    let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rot));
    let translation = mu_y - scale * (rotation * mu_x);
    Ok(Sim3Transform { scale, rotation, translation })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpConfig {
    pub max_iters: usize,
    /// Stop when the relative RMS improvement drops below this.
    pub tolerance: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self { max_iters: 50, tolerance: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct IcpOutcome {
    pub transform: Sim3Transform,
    /// RMS nearest-neighbor residual, starting with the initial transform.
    pub rms_history: Vec<f64>,
}

fn match_all(tree: &KdTree, moved: &[Vec3]) -> (Vec<Vec3>, f64) {
    let mut matched = Vec::with_capacity(moved.len());
    let mut sum = 0.0;
    for p in moved {
        let nn = tree.nearest(p).expect("non-empty tree");
        sum += nn.dist_sq;
        matched.push(*tree.point(nn.index));
    }
    (matched, (sum / moved.len() as f64).sqrt())
}

/// Point-to-point ICP over similarity transforms. Every accepted iteration
/// re-solves the closed-form alignment against the current nearest
/// neighbors, so the RMS residual never increases.
pub fn icp_refine(
    source: &[Vec3],
    target: &[Vec3],
    init: &Sim3Transform,
    cfg: &IcpConfig,
) -> Result<IcpOutcome, GeometryError> {
    if source.is_empty() || target.is_empty() {
        return Err(GeometryError::Degenerate("empty correspondence set"));
    }
    let tree = KdTree::new(target);
    let mut current = *init;
    let (mut matched, mut rms) = match_all(&tree, &current.apply_all(source));
    let mut history = vec![rms];
    for _ in 0..cfg.max_iters {
        if rms == 0.0 {
            break;
        }
        let candidate = match umeyama_align(source, &matched) {
            Ok(t) => t,
            Err(_) => break,
        };
        let (next_matched, next_rms) = match_all(&tree, &candidate.apply_all(source));
        if next_rms > rms {
            break;
        }
        let improvement = (rms - next_rms) / rms;
        current = candidate;
        matched = next_matched;
        rms = next_rms;
        history.push(rms);
        if improvement < cfg.tolerance {
            break;
        }
    }
    Ok(IcpOutcome { transform: current, rms_history: history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random_cloud(rng: &mut SplitMix64, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|_| Vec3::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)))
            .collect()
    }

    fn random_rotation(rng: &mut SplitMix64, max_angle: f64) -> UnitQuaternion<f64> {
        let axis = nalgebra::Unit::new_normalize(Vec3::new(rng.normal(), rng.normal(), rng.normal()));
        UnitQuaternion::from_axis_angle(&axis, rng.uniform(-max_angle, max_angle))
    }

    fn assert_sim3_close(a: &Sim3Transform, b: &Sim3Transform, tol: f64) {
        assert!((a.scale - b.scale).abs() < tol, "scale {} vs {}", a.scale, b.scale);
        assert!(a.rotation.angle_to(&b.rotation) < tol, "rotation off by {}", a.rotation.angle_to(&b.rotation));
        assert!((a.translation - b.translation).abs().max() < tol);
    }

    #[test]
    fn self_alignment_is_identity() {
        let mut rng = SplitMix64::new(1);
        let pts = random_cloud(&mut rng, 30);
        let t = umeyama_align(&pts, &pts).unwrap();
        assert_sim3_close(&t, &Sim3Transform::identity(), 1e-12);
    }

    #[test]
    fn recovers_known_similarity() {
        let mut rng = SplitMix64::new(2);
        let pts = random_cloud(&mut rng, 10);
        let truth = Sim3Transform::new(
            2.0,
            UnitQuaternion::from_axis_angle(&Vec3::z_axis(), 30f64.to_radians()),
            Vec3::new(1.0, 2.0, 3.0),
        );
        let got = umeyama_align(&pts, &truth.apply_all(&pts)).unwrap();
        assert_sim3_close(&got, &truth, 1e-9);
    }

    #[test]
    fn recovers_random_similarities() {
        let mut rng = SplitMix64::new(3);
        for _ in 0..200 {
            let n = 4 + rng.below(20) as usize;
            let pts = random_cloud(&mut rng, n);
            let truth = Sim3Transform::new(
                10f64.powf(rng.uniform(-1.0, 1.0)),
                random_rotation(&mut rng, std::f64::consts::PI),
                Vec3::new(rng.normal(), rng.normal(), rng.normal()) * 5.0,
            );
            let got = umeyama_align(&pts, &truth.apply_all(&pts)).unwrap();
            assert_sim3_close(&got, &truth, 1e-9);
        }
    }

    #[test]
    fn planar_points_still_align() {
        let pts: Vec<Vec3> =
            vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0), Vec3::new(1.0, 1.0, 0.0)];
        let truth = Sim3Transform::new(
            0.5,
            UnitQuaternion::from_axis_angle(&Vec3::x_axis(), 1.0),
            Vec3::new(0.0, -1.0, 2.0),
        );
        let got = umeyama_align(&pts, &truth.apply_all(&pts)).unwrap();
        assert_sim3_close(&got, &truth, 1e-9);
    }

    #[test]
    fn collinear_is_degenerate() {
        let pts = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 1.0, 1.0), Vec3::new(2.0, 2.0, 2.0)];
        assert!(matches!(umeyama_align(&pts, &pts), Err(GeometryError::Degenerate(_))));
        let same = vec![Vec3::new(1.0, 2.0, 3.0); 5];
        assert!(umeyama_align(&same, &same).is_err());
        assert!(umeyama_align(&pts[..2], &pts[..2]).is_err());
    }

    #[test]
    fn compose_and_inverse() {
        let mut rng = SplitMix64::new(4);
        let a = Sim3Transform::new(1.7, random_rotation(&mut rng, 3.0), Vec3::new(1.0, -2.0, 0.5));
        let b = Sim3Transform::new(0.3, random_rotation(&mut rng, 3.0), Vec3::new(0.0, 4.0, -1.0));
        let p = Vec3::new(0.2, 0.4, -0.9);
        assert!((a.compose(&b).apply(&p) - a.apply(&b.apply(&p))).norm() < 1e-12);
        assert!((a.inverse().apply(&a.apply(&p)) - p).norm() < 1e-12);
    }

    #[test]
    fn icp_fixed_point() {
        let mut rng = SplitMix64::new(5);
        let src = random_cloud(&mut rng, 200);
        let truth = Sim3Transform::new(1.3, random_rotation(&mut rng, 1.0), Vec3::new(0.5, 0.1, -0.2));
        let tgt = truth.apply_all(&src);
        let out = icp_refine(&src, &tgt, &truth, &IcpConfig::default()).unwrap();
        assert_sim3_close(&out.transform, &truth, 1e-9);
    }

    #[test]
    fn icp_recovers_small_rigid_motion() {
        let mut rng = SplitMix64::new(6);
        let src = random_cloud(&mut rng, 400);
        let truth = Sim3Transform::new(
            1.0,
            UnitQuaternion::from_axis_angle(&Vec3::y_axis(), 2f64.to_radians()),
            Vec3::new(0.02, -0.01, 0.015),
        );
        let tgt = truth.apply_all(&src);
        let out = icp_refine(&src, &tgt, &Sim3Transform::identity(), &IcpConfig::default()).unwrap();
        assert_sim3_close(&out.transform, &truth, 1e-4);
    }

    #[test]
    fn icp_rms_is_monotone() {
        let mut rng = SplitMix64::new(7);
        for _ in 0..20 {
            let src = random_cloud(&mut rng, 100);
            let tgt = random_cloud(&mut rng, 80);
            let out = icp_refine(&src, &tgt, &Sim3Transform::identity(), &IcpConfig::default()).unwrap();
            for w in out.rms_history.windows(2) {
                assert!(w[1] <= w[0]);
            }
        }
    }

    #[test]
    fn icp_empty_is_degenerate() {
        assert!(icp_refine(&[], &[Vec3::zeros()], &Sim3Transform::identity(), &IcpConfig::default()).is_err());
    }
}

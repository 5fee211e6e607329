use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::geometry::Vec3;

/// Sparse metric supervision for one view: pixel indices into the predicted
/// point map plus the measured camera-frame points.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LidarTargets {
    pub pixels: Vec<usize>,
    pub points: Vec<Vec3>,
}

impl LidarTargets {
    pub fn new(pixels: Vec<usize>, points: Vec<Vec3>) -> Self {
        assert_eq!(pixels.len(), points.len(), "one point per pixel");
        Self { pixels, points }
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

fn l1(v: &Vec3) -> f64 {
    v.x.abs() + v.y.abs() + v.z.abs()
}

/// Mean over targets of `‖s·x̂ − x‖₁ / (z + ε)`.
pub fn point_loss(pred: &[Vec3], targets: &LidarTargets, s: f64, eps: f64) -> Result<f64, MetricsError> {
    if targets.is_empty() {
        return Err(MetricsError::EmptyTargets);
    }
    let sum: f64 = targets
        .pixels
        .iter()
        .zip(&targets.points)
        .map(|(&px, x)| l1(&(s * pred[px] - x)) / (x.z + eps))
        .sum();
    Ok(sum / targets.len() as f64)
}

pub const SCALE_BRACKET: (f64, f64) = (1e-3, 1e3);

/// Golden-section minimization of [`point_loss`] over `s` in
/// [`SCALE_BRACKET`]. The loss is convex in `s`.
pub fn solve_scale(pred: &[Vec3], targets: &LidarTargets, eps: f64) -> Result<f64, MetricsError> {
    if targets.is_empty() {
        return Err(MetricsError::EmptyTargets);
    }
    let f = |s: f64| point_loss(pred, targets, s, eps).expect("non-empty");
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = SCALE_BRACKET;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-12 * (1.0 + c.abs()) {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    Ok(if fc <= fd { c } else { d })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    pub width: usize,
    pub height: usize,
    pub normals: Vec<Vec3>,
    pub valid: Vec<bool>,
}

/// Normals from the cross product of the right and down neighbor
/// differences. The last row and column, and pixels whose cross product
/// vanishes, are invalid.
pub fn normals_from_pointmap(points: &[Vec3], width: usize, height: usize) -> NormalMap {
    assert_eq!(points.len(), width * height, "point map size");
    let mut normals = vec![Vec3::zeros(); width * height];
    let mut valid = vec![false; width * height];
    for r in 0..height.saturating_sub(1) {
        for c in 0..width.saturating_sub(1) {
            let i = r * width + c;
            let a = points[i + 1] - points[i];
            let b = points[i + width] - points[i];
            let n = a.cross(&b);
            let norm = n.norm();
            if norm > 1e-12 * (a.norm() * b.norm()).max(f64::MIN_POSITIVE) && norm.is_finite() {
                normals[i] = n / norm;
                valid[i] = true;
            }
        }
    }
    NormalMap { width, height, normals, valid }
}

/// Mean angle between normals over pixels valid in both maps.
pub fn normal_loss(pred: &NormalMap, target: &NormalMap) -> Result<f64, MetricsError> {
    if pred.normals.len() != target.normals.len() {
        return Err(MetricsError::DimensionMismatch);
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..pred.normals.len() {
        if pred.valid[i] && target.valid[i] {
            // Same angle as arccos of the dot product, without its loss of
            // precision near 0 and π.
            let (a, b) = (&pred.normals[i], &target.normals[i]);
            sum += a.cross(b).norm().atan2(a.dot(b));
            n += 1;
        }
    }
    if n == 0 {
        return Err(MetricsError::EmptyMask);
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossComponents {
    pub mse: f64,
    pub points: f64,
    pub normal: f64,
    /// Perceptual term; computed elsewhere, or zero.
    pub lpips: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub mse: f64,
    pub points: f64,
    pub normal: f64,
    pub lpips: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { mse: 1.0, points: 1.0, normal: 1.0, lpips: 0.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if [self.mse, self.points, self.normal, self.lpips].iter().all(|w| *w >= 0.0) {
            Ok(())
        } else {
            Err(MetricsError::NegativeWeight)
        }
    }
}

pub fn total_loss(c: &LossComponents, w: &LossWeights) -> f64 {
    w.mse * c.mse + w.points * c.points + w.normal * c.normal + w.lpips * c.lpips
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn cloud(rng: &mut SplitMix64, n: usize) -> Vec<Vec3> {
        (0..n).map(|_| Vec3::new(rng.uniform(-3.0, 3.0), rng.uniform(-2.0, 2.0), rng.uniform(1.0, 20.0))).collect()
    }

    fn targets_of(points: &[Vec3]) -> LidarTargets {
        LidarTargets::new((0..points.len()).collect(), points.to_vec())
    }

    #[test]
    fn point_loss_examples() {
        let mut rng = SplitMix64::new(1);
        let x = cloud(&mut rng, 50);
        let t = targets_of(&x);
        assert_eq!(point_loss(&x, &t, 1.0, 1e-6).unwrap(), 0.0);
        let doubled: Vec<Vec3> = x.iter().map(|p| 2.0 * p).collect();
        assert_relative_eq!(point_loss(&doubled, &t, 0.5, 1e-6).unwrap(), 0.0, epsilon = 1e-12);
        // ‖s·x̂ − x‖₁ = 0.3, z = 2.
        let t1 = LidarTargets::new(vec![0], vec![Vec3::new(0.0, 0.0, 2.0)]);
        let pred = [Vec3::new(0.1, -0.1, 2.1)];
        assert_relative_eq!(point_loss(&pred, &t1, 1.0, 0.0).unwrap(), 0.15, epsilon = 1e-12);
        assert_eq!(point_loss(&pred, &LidarTargets::default(), 1.0, 0.0), Err(MetricsError::EmptyTargets));
    }

    #[test]
    fn joint_scaling_invariance() {
        let mut rng = SplitMix64::new(2);
        let x = cloud(&mut rng, 30);
        let pred: Vec<Vec3> = x.iter().map(|p| p * 1.1 + Vec3::repeat(0.05)).collect();
        let t = targets_of(&x);
        let base = point_loss(&pred, &t, 0.9, 1e-6).unwrap();
        let scaled: Vec<Vec3> = pred.iter().map(|p| 4.0 * p).collect();
        assert_relative_eq!(point_loss(&scaled, &t, 0.9 / 4.0, 1e-6).unwrap(), base, epsilon = 1e-12);
    }

    #[test]
    fn solve_scale_examples() {
        let mut rng = SplitMix64::new(3);
        let x = cloud(&mut rng, 40);
        let t = targets_of(&x);
        assert!((solve_scale(&x, &t, 1e-6).unwrap() - 1.0).abs() < 1e-4);
        let third: Vec<Vec3> = x.iter().map(|p| p / 3.0).collect();
        assert!((solve_scale(&third, &t, 1e-6).unwrap() - 3.0).abs() < 1e-3);
    }

    #[test]
    fn solve_scale_matches_grid_search() {
        let mut rng = SplitMix64::new(4);
        for _ in 0..5 {
            let x = cloud(&mut rng, 25);
            let k = rng.uniform(0.2, 5.0);
            let pred: Vec<Vec3> =
                x.iter().map(|p| k * p + Vec3::new(rng.normal(), rng.normal(), rng.normal()) * 0.3).collect();
            let t = targets_of(&x);
            let s = solve_scale(&pred, &t, 1e-6).unwrap();
            let got = point_loss(&pred, &t, s, 1e-6).unwrap();
            // Log-spaced grid over the whole bracket, then a fine grid
            // around the coarse winner.
            let (lo, hi) = (SCALE_BRACKET.0.ln(), SCALE_BRACKET.1.ln());
            let coarse = (0..10_000)
                .map(|i| (lo + (hi - lo) * i as f64 / 9999.0).exp())
                .min_by(|a, b| point_loss(&pred, &t, *a, 1e-6).unwrap().total_cmp(&point_loss(&pred, &t, *b, 1e-6).unwrap()))
                .unwrap();
            let oracle = (0..10_000)
                .map(|i| coarse * (1.0 + 2e-3 * (i as f64 / 9999.0 - 0.5)))
                .map(|s| point_loss(&pred, &t, s, 1e-6).unwrap())
                .fold(f64::INFINITY, f64::min);
            assert!(got <= oracle + 1e-6, "{got} vs {oracle}");
        }
    }

    fn grid_points(w: usize, h: usize, f: impl Fn(f64, f64) -> Vec3) -> Vec<Vec3> {
        (0..h).flat_map(|r| (0..w).map(move |c| (c, r))).map(|(c, r)| f(c as f64 * 0.1, r as f64 * 0.1)).collect()
    }

    #[test]
    fn plane_normals() {
        let m = normals_from_pointmap(&grid_points(6, 5, |x, y| Vec3::new(x, y, 2.0)), 6, 5);
        for r in 0..5 {
            for c in 0..6 {
                let i = r * 6 + c;
                assert_eq!(m.valid[i], r < 4 && c < 5);
                if m.valid[i] {
                    assert!((m.normals[i].z.abs() - 1.0).abs() < 1e-12);
                }
            }
        }
        let tilted = normals_from_pointmap(&grid_points(4, 4, |x, y| Vec3::new(x, y, x)), 4, 4);
        let want = Vec3::new(-1.0, 0.0, 1.0) / 2f64.sqrt();
        for i in (0..16).filter(|&i| tilted.valid[i]) {
            let n = tilted.normals[i];
            assert!((n - want).norm() < 1e-12 || (n + want).norm() < 1e-12, "{n:?}");
        }
        let mut pts = grid_points(3, 3, |x, y| Vec3::new(x, y, 1.0));
        pts[1] = pts[0];
        assert!(!normals_from_pointmap(&pts, 3, 3).valid[0]);
    }

    #[test]
    fn normal_loss_examples() {
        let m = normals_from_pointmap(&grid_points(5, 5, |x, y| Vec3::new(x, y, 0.3 * x + 1.0)), 5, 5);
        assert_eq!(normal_loss(&m, &m).unwrap(), 0.0);
        let mut opposite = m.clone();
        opposite.normals.iter_mut().for_each(|n| *n = -*n);
        assert_relative_eq!(normal_loss(&m, &opposite).unwrap(), PI, epsilon = 1e-7);
        let mut ortho = m.clone();
        ortho.normals.iter_mut().for_each(|n| *n = n.cross(&Vec3::y()).normalize());
        assert_relative_eq!(normal_loss(&m, &ortho).unwrap(), FRAC_PI_2, epsilon = 1e-12);
        let mut none = m.clone();
        none.valid.iter_mut().for_each(|v| *v = false);
        assert_eq!(normal_loss(&m, &none), Err(MetricsError::EmptyMask));
    }

    #[test]
    fn total_loss_examples() {
        let w = LossWeights::default();
        assert_eq!(total_loss(&LossComponents::default(), &w), 0.0);
        let c = LossComponents { mse: 1.0, points: 2.0, normal: 3.0, lpips: 0.0 };
        assert_eq!(total_loss(&c, &w), 6.0);
        let zero = LossWeights { mse: 0.0, points: 0.0, normal: 0.0, lpips: 0.0 };
        assert_eq!(total_loss(&c, &zero), 0.0);
        assert!(LossWeights { mse: -1.0, ..w }.validate().is_err());
    }
}

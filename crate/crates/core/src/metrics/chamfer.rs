use rayon::prelude::*;

use super::MetricsError;
use crate::geometry::{icp_refine, umeyama_align, IcpConfig, Sim3Transform, Vec3};
use crate::spatial::KdTree;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChamferResult {
    /// Mean distance from each predicted point to the ground truth.
    pub accuracy: f64,
    /// Mean distance from each ground-truth point to the prediction.
    pub completeness: f64,
    pub overall: f64,
    /// Transform applied to the prediction before measuring.
    pub transform: Sim3Transform,
}

/// Mean nearest-neighbor distance from `from` to `to`. Summation runs in
/// index order.
pub fn mean_nearest_distance(from: &[Vec3], to: &KdTree) -> f64 {
    let d: Vec<f64> = from.par_iter().map(|p| to.nearest(p).expect("non-empty").distance()).collect();
    d.iter().sum::<f64>() / d.len() as f64
}

fn measure(pred: &[Vec3], gt: &[Vec3], gt_tree: &KdTree, transform: Sim3Transform) -> ChamferResult {
    let moved = transform.apply_all(pred);
    let accuracy = mean_nearest_distance(&moved, gt_tree);
    let completeness = mean_nearest_distance(gt, &KdTree::new(&moved));
    ChamferResult { accuracy, completeness, overall: 0.5 * (accuracy + completeness), transform }
}

/// Moment-matching initial guess: centroids and RMS spreads, no rotation.
fn moment_init(pred: &[Vec3], gt: &[Vec3]) -> Sim3Transform {
    let c = |pts: &[Vec3]| pts.iter().sum::<Vec3>() / pts.len() as f64;
    let (cp, cg) = (c(pred), c(gt));
    let spread = |pts: &[Vec3], m: &Vec3| (pts.iter().map(|p| (p - m).norm_squared()).sum::<f64>() / pts.len() as f64).sqrt();
    let (sp, sg) = (spread(pred, &cp), spread(gt, &cg));
    let scale = if sp > 0.0 && sg > 0.0 { sg / sp } else { 1.0 };
    Sim3Transform::new(scale, nalgebra::UnitQuaternion::identity(), cg - scale * cp)
}

/// Accuracy, completeness and their mean. With `align`, the prediction is
/// first registered to the ground truth: closed-form similarity on index
/// correspondences when the clouds have equal size (moment matching
/// otherwise), then ICP. The alignment is kept only if it does not worsen
/// the overall score.
pub fn chamfer_metrics(pred: &[Vec3], gt: &[Vec3], align: bool) -> Result<ChamferResult, MetricsError> {
    if pred.is_empty() || gt.is_empty() {
        return Err(MetricsError::EmptyCloud);
    }
    let gt_tree = KdTree::new(gt);
    let plain = measure(pred, gt, &gt_tree, Sim3Transform::identity());
    if !align {
        return Ok(plain);
    }
    let init = if pred.len() == gt.len() {
        umeyama_align(pred, gt).unwrap_or_else(|_| moment_init(pred, gt))
    } else {
        moment_init(pred, gt)
    };
    let refined = icp_refine(pred, gt, &init, &IcpConfig::default()).map(|o| o.transform).unwrap_or(init);
    let aligned = measure(pred, gt, &gt_tree, refined);
    Ok(if aligned.overall <= plain.overall { aligned } else { plain })
}

use rayon::prelude::*;

use super::{GridError, SampleBatch, SparseSphericalGrid};
use crate::geometry::Vec3;
use crate::mlp::{MlpError, MlpScratch, TinyMlp};

/// Normalized inverse-distance weights `(‖x_n − x̄‖ + ε)⁻¹`.
pub fn inv_dist_weights(positions: &[Vec3], center: &Vec3, epsilon: f64) -> Vec<f64> {
    let mut w: Vec<f64> = positions.iter().map(|p| 1.0 / ((p - center).norm() + epsilon)).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

/// Pools one cell: runs the MLP on `[a_n ‖ x_n − x̄]` for every member and
/// returns the weighted feature and color. `members` must already be in
/// canonical order.
pub fn pool_anchor(
    samples: &SampleBatch,
    members: &[u32],
    center: &Vec3,
    mlp: &TinyMlp,
    epsilon: f64,
) -> Result<(Vec<f64>, [f64; 3]), MlpError> {
    let expected = samples.attribute_dim() + 3;
    if mlp.input_dim() != expected {
        return Err(MlpError::DimensionMismatch { expected, got: mlp.input_dim() });
    }
    let positions: Vec<Vec3> = members.iter().map(|&m| samples.positions[m as usize]).collect();
    let weights = inv_dist_weights(&positions, center, epsilon);
    let mut feature = vec![0.0; mlp.output_dim()];
    let mut color = [0.0; 3];
    let mut input = Vec::with_capacity(expected);
    let mut scratch = MlpScratch::default();
    for (&m, &w) in members.iter().zip(&weights) {
        let m = m as usize;
        input.clear();
        samples.write_attribute(m, &mut input);
        let rel = samples.positions[m] - center;
        input.extend_from_slice(&[rel.x, rel.y, rel.z]);
        let out = mlp.forward_with(&input, &mut scratch)?;
        for (f, o) in feature.iter_mut().zip(out) {
            *f += w * o;
        }
        for (c, s) in color.iter_mut().zip(samples.rgb[m]) {
            *c += w * s;
        }
    }
    // Rounding can push a convex combination of values in [0, 1] just outside.
    color.iter_mut().for_each(|c| *c = c.clamp(0.0, 1.0));
    Ok((feature, color))
}

/// Fills `feature` and `color` of every cell.
pub fn aggregate_anchors(
    grid: &mut SparseSphericalGrid,
    samples: &SampleBatch,
    members: &[Vec<u32>],
    mlp: &TinyMlp,
    epsilon: f64,
) -> Result<(), GridError> {
    let mut cells: Vec<_> = grid.cells.values_mut().collect();
    cells.par_iter_mut().zip(members.par_iter()).try_for_each(|(cell, m)| {
        let (feature, color) = pool_anchor(samples, m, &cell.center, mlp, epsilon)?;
        cell.feature = feature;
        cell.color = color;
        Ok::<(), GridError>(())
    })
}

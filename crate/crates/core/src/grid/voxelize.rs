use rayon::prelude::*;

use super::{AnchorCell, SampleBatch, SparseSphericalGrid};
use crate::geometry::{to_spherical, voxel_index, GridSpec, Vec3, VoxelIndex};

#[derive(Debug, Clone)]
pub struct Voxelization {
    /// Cells carry center and count only; features are filled later.
    pub grid: SparseSphericalGrid,
    /// Member sample indices per cell, in grid order, sorted by
    /// (row, col, view).
    pub members: Vec<Vec<u32>>,
    /// Samples rejected as out of range.
    pub dropped: usize,
}

/// Assigns samples to voxels and computes anchor centers. The result does
/// not depend on sample order.
pub fn voxelize(samples: &SampleBatch, spec: &GridSpec) -> Voxelization {
    let mut keyed: Vec<(VoxelIndex, (u32, u32, u32), u32)> = (0..samples.len())
        .into_par_iter()
        .filter_map(|i| {
            let s = to_spherical(&samples.positions[i], spec.epsilon);
            voxel_index(&s, spec).ok().map(|v| (v, samples.origins[i].sort_key(), i as u32))
        })
        .collect();
    let dropped = samples.len() - keyed.len();
    keyed.par_sort_unstable();

    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    for i in 1..=keyed.len() {
        if i == keyed.len() || keyed[i].0 != keyed[start].0 {
            runs.push((start, i));
            start = i;
        }
    }
    if keyed.is_empty() {
        runs.clear();
    }

    let cells: Vec<(AnchorCell, Vec<u32>)> = runs
        .par_iter()
        .map(|&(a, b)| {
            let members: Vec<u32> = keyed[a..b].iter().map(|k| k.2).collect();
            let mut sum = Vec3::zeros();
            for &m in &members {
                sum += samples.positions[m as usize];
            }
            let cell = AnchorCell {
                index: keyed[a].0,
                center: sum / members.len() as f64,
                color: [0.0; 3],
                feature: Vec::new(),
                refined: Vec::new(),
                count: members.len() as u32,
            };
            (cell, members)
        })
        .collect();

    let mut grid = SparseSphericalGrid::new(*spec);
    let mut members = Vec::with_capacity(cells.len());
    for (cell, m) in cells {
        grid.cells.insert(cell.index, cell);
        members.push(m);
    }
    Voxelization { grid, members, dropped }
}

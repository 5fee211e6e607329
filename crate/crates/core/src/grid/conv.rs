use std::io::{Read, Write};

use rayon::prelude::*;

use super::{GridError, SparseSphericalGrid};
use crate::geometry::VoxelIndex;
use crate::mlp::MlpError;
use crate::rng::SplitMix64;

pub const KERNEL_TAPS: usize = 27;

/// 3×3×3 sparse convolution kernel with `D×D` weights per tap. Tap
/// `(dr+1)·9 + (dθ+1)·3 + (dφ+1)` is row-major `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    dim: usize,
    taps: Vec<Vec<f64>>,
}

pub fn tap_index(dr: i32, dtheta: i32, dphi: i32) -> usize {
    ((dr + 1) * 9 + (dtheta + 1) * 3 + (dphi + 1)) as usize
}

impl ConvKernel {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, taps: vec![vec![0.0; dim * dim]; KERNEL_TAPS] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut k = Self::zeros(dim);
        let c = &mut k.taps[tap_index(0, 0, 0)];
        for i in 0..dim {
            c[i * dim + i] = 1.0;
        }
        k
    }

    /// Every tap is `I / 27`.
    pub fn uniform_average(dim: usize) -> Self {
        let mut k = Self::zeros(dim);
        for t in &mut k.taps {
            for i in 0..dim {
                t[i * dim + i] = 1.0 / KERNEL_TAPS as f64;
            }
        }
        k
    }

    /// Identity center tap plus small random mixing on all taps, rounded to
    /// f32.
    pub fn seeded(dim: usize, gain: f64, rng: &mut SplitMix64) -> Self {
        let mut k = Self::identity(dim);
        let bound = gain / (dim as f64).sqrt();
        for t in &mut k.taps {
            for w in t.iter_mut() {
                *w = (*w + rng.uniform(-bound, bound)) as f32 as f64;
            }
        }
        k
    }

    pub fn from_taps(dim: usize, taps: Vec<Vec<f64>>) -> Result<Self, MlpError> {
        if taps.len() != KERNEL_TAPS || taps.iter().any(|t| t.len() != dim * dim) {
            return Err(MlpError::InvalidLayout(format!("kernel needs {KERNEL_TAPS} taps of {dim}x{dim}")));
        }
        if taps.iter().flatten().any(|w| !w.is_finite()) {
            return Err(MlpError::InvalidLayout("non-finite kernel weight".into()));
        }
        Ok(Self { dim, taps })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tap(&self, index: usize) -> &[f64] {
        &self.taps[index]
    }

    pub fn tap_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.taps[index]
    }

    /// Layout: u32 dim, then 27·D·D little-endian f32.
    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        for t in &self.taps {
            for &x in t {
                w.write_all(&(x as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R, max_dim: usize) -> Result<Self, MlpError> {
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(|_| MlpError::Truncated)?;
        let dim = u32::from_le_bytes(b4) as usize;
        if dim == 0 || dim > max_dim {
            return Err(MlpError::InvalidLayout(format!("kernel dim {dim} out of range")));
        }
        let mut taps = Vec::with_capacity(KERNEL_TAPS);
        for _ in 0..KERNEL_TAPS {
            let mut t = Vec::with_capacity(dim * dim);
            for _ in 0..dim * dim {
                r.read_exact(&mut b4).map_err(|_| MlpError::Truncated)?;
                t.push(f32::from_le_bytes(b4) as f64);
            }
            taps.push(t);
        }
        Self::from_taps(dim, taps)
    }
}

fn neighbor(idx: &VoxelIndex, dr: i32, dt: i32, dp: i32, n_theta: u32) -> Option<VoxelIndex> {
    let i_r = idx.i_r.checked_add_signed(dr)?;
    let i_phi = idx.i_phi.checked_add_signed(dp)?;
    let i_theta = (idx.i_theta as i64 + dt as i64).rem_euclid(n_theta as i64) as u32;
    Some(VoxelIndex { i_r, i_theta, i_phi })
}

/// Fills `refined` of every cell. Missing neighbors (including those past
/// the radial and elevation borders) contribute zero; azimuth wraps.
pub fn sparse_conv(grid: &mut SparseSphericalGrid, kernel: &ConvKernel) -> Result<(), GridError> {
    let d = kernel.dim;
    if let Some(cell) = grid.cells.values().find(|c| c.feature.len() != d) {
        return Err(GridError::KernelMismatch { kernel: d, grid: cell.feature.len() });
    }
    let n_theta = grid.spec.n_theta;
    let keys: Vec<VoxelIndex> = grid.cells.keys().copied().collect();
    let cells = &grid.cells;
    let refined: Vec<Vec<f64>> = keys
        .par_iter()
        .map(|idx| {
            let mut z = vec![0.0; d];
            let mut seen: [Option<VoxelIndex>; KERNEL_TAPS] = [None; KERNEL_TAPS];
            for dr in -1..=1 {
                for dt in -1..=1 {
                    for dp in -1..=1 {
                        let t = tap_index(dr, dt, dp);
                        let Some(nb) = neighbor(idx, dr, dt, dp, n_theta) else { continue };
                        // With N_θ < 3 two azimuth offsets can reach the same cell.
                        if n_theta < 3 && seen[..t].contains(&Some(nb)) {
                            continue;
                        }
                        seen[t] = Some(nb);
                        let Some(cell) = cells.get(&nb) else { continue };
                        let w = &kernel.taps[t];
                        for (o, zo) in z.iter_mut().enumerate() {
                            let row = &w[o * d..(o + 1) * d];
                            *zo += row.iter().zip(&cell.feature).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                }
            }
            z
        })
        .collect();
    for (cell, z) in grid.cells.values_mut().zip(refined) {
        cell.refined = z;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{GridSpec, Vec3};
    use crate::grid::AnchorCell;

    fn cell(index: VoxelIndex, feature: Vec<f64>) -> AnchorCell {
        AnchorCell { index, center: Vec3::x(), color: [0.5; 3], feature, refined: Vec::new(), count: 1 }
    }

    fn grid_with(cells: Vec<AnchorCell>) -> SparseSphericalGrid {
        let mut g = SparseSphericalGrid::new(GridSpec::default());
        for c in cells {
            g.cells.insert(c.index, c);
        }
        g
    }

    #[test]
    fn identity_kernel_copies() {
        let mut g = grid_with(vec![
            cell(VoxelIndex::new(3, 4, 5), vec![1.0, -2.0, 0.5]),
            cell(VoxelIndex::new(3, 5, 5), vec![0.25, 4.0, -1.0]),
        ]);
        sparse_conv(&mut g, &ConvKernel::identity(3)).unwrap();
        for c in g.cells.values() {
            assert_eq!(c.refined, c.feature);
        }
    }

    #[test]
    fn averaging_constant_field() {
        let mut cells = Vec::new();
        for r in 0..5 {
            for t in 0..180 {
                for p in 0..90 {
                    cells.push(cell(VoxelIndex::new(r, t, p), vec![0.3, -0.7]));
                }
            }
        }
        let mut g = grid_with(cells);
        sparse_conv(&mut g, &ConvKernel::uniform_average(2)).unwrap();
        // Cells with a full neighborhood see a constant field.
        let c = &g.cells[&VoxelIndex::new(2, 0, 40)];
        assert!((c.refined[0] - 0.3).abs() < 1e-12 && (c.refined[1] + 0.7).abs() < 1e-12);
        let c = &g.cells[&VoxelIndex::new(2, 179, 40)];
        assert!((c.refined[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn azimuth_wraps() {
        let n = GridSpec::default().n_theta;
        let mut g = grid_with(vec![
            cell(VoxelIndex::new(1, 0, 10), vec![1.0]),
            cell(VoxelIndex::new(1, n - 1, 10), vec![10.0]),
        ]);
        let mut k = ConvKernel::zeros(1);
        k.tap_mut(tap_index(0, 1, 0))[0] = 1.0; // pull from θ+1
        k.tap_mut(tap_index(0, -1, 0))[0] = 100.0; // pull from θ−1
        sparse_conv(&mut g, &k).unwrap();
        // cell 0: θ−1 wraps to N−1, θ+1 (1) empty
        assert_eq!(g.cells[&VoxelIndex::new(1, 0, 10)].refined, vec![1000.0]);
        // cell N−1: θ+1 wraps to 0
        assert_eq!(g.cells[&VoxelIndex::new(1, n - 1, 10)].refined, vec![1.0]);
    }

    #[test]
    fn borders_zero_padded() {
        let mut g = grid_with(vec![cell(VoxelIndex::new(0, 7, 0), vec![2.0])]);
        let mut k = ConvKernel::zeros(1);
        for t in 0..KERNEL_TAPS {
            k.tap_mut(t)[0] = 1.0;
        }
        sparse_conv(&mut g, &k).unwrap();
        assert_eq!(g.cells[&VoxelIndex::new(0, 7, 0)].refined, vec![2.0]);
    }

    #[test]
    fn dimension_checked() {
        let mut g = grid_with(vec![cell(VoxelIndex::new(0, 0, 0), vec![1.0, 2.0])]);
        assert_eq!(
            sparse_conv(&mut g, &ConvKernel::identity(3)),
            Err(GridError::KernelMismatch { kernel: 3, grid: 2 })
        );
    }

    #[test]
    fn kernel_round_trip() {
        let mut rng = SplitMix64::new(9);
        let k = ConvKernel::seeded(4, 0.1, &mut rng);
        let mut buf = Vec::new();
        k.write_to(&mut buf).unwrap();
        assert_eq!(ConvKernel::read_from(&mut buf.as_slice(), 1024).unwrap(), k);
        assert_eq!(ConvKernel::read_from(&mut &buf[..buf.len() - 1], 1024), Err(MlpError::Truncated));
    }
}

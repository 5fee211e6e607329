//! Sparse spherical voxel grid: point-map lifting, voxel assignment, anchor
//! feature pooling and one sparse convolution layer.

mod conv;
mod pool;
mod samples;
mod voxelize;

use std::collections::BTreeMap;

use thiserror::Error;

pub use conv::{sparse_conv, ConvKernel, KERNEL_TAPS};
pub use pool::{aggregate_anchors, inv_dist_weights, pool_anchor};
pub use samples::{assemble_point_samples, PixelRef, PointSample, SampleBatch, ATTRIBUTE_BASE_DIM};
pub use voxelize::{voxelize, Voxelization};

use crate::geometry::{GridSpec, Vec3, VoxelIndex};
use crate::mlp::{MlpError, TinyMlp};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("empty frame: no pixel passes the confidence threshold")]
    EmptyFrame,
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error("kernel feature dim {kernel} does not match anchor feature dim {grid}")]
    KernelMismatch { kernel: usize, grid: usize },
}

/// One occupied voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorCell {
    pub index: VoxelIndex,
    /// Mean member position (robot frame).
    pub center: Vec3,
    /// Inverse-distance-weighted member color.
    pub color: [f64; 3],
    /// Pooled anchor feature.
    pub feature: Vec<f64>,
    /// Feature after the sparse convolution; empty until it runs.
    pub refined: Vec<f64>,
    pub count: u32,
}

impl AnchorCell {
    pub fn radius(&self) -> f64 {
        self.center.norm()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseSphericalGrid {
    pub spec: GridSpec,
    pub cells: BTreeMap<VoxelIndex, AnchorCell>,
}

impl SparseSphericalGrid {
    pub fn new(spec: GridSpec) -> Self {
        Self { spec, cells: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn point_count(&self) -> u64 {
        self.cells.values().map(|c| c.count as u64).sum()
    }

    /// Occupied-cell count and member count per radial shell.
    pub fn shell_histogram(&self) -> Vec<(u32, u64)> {
        let mut shells = vec![(0u32, 0u64); self.spec.n_r() as usize];
        for c in self.cells.values() {
            let s = &mut shells[c.index.i_r as usize];
            s.0 += 1;
            s.1 += c.count as u64;
        }
        shells
    }
}

/// Weights of the aggregation stage: the per-member MLP and the sparse
/// convolution kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorWeights {
    pub pool: TinyMlp,
    pub conv: ConvKernel,
}

/// Tunables of the aggregation stage.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregationConfig {
    pub confidence_threshold: f32,
    /// ε of the inverse-distance weights, meters.
    pub weight_epsilon: f64,
    /// Dimension D of anchor features.
    pub anchor_dim: usize,
    /// Hidden width of the pooling MLP.
    pub pool_hidden: usize,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self { confidence_threshold: 0.5, weight_epsilon: 1e-6, anchor_dim: 32, pool_hidden: 32 }
    }
}

/// Voxelization, pooling and convolution in one pass.
#[derive(Debug, Clone)]
pub struct AnchorGrid {
    pub grid: SparseSphericalGrid,
    /// Sample indices per cell, in grid order, canonically sorted.
    pub members: Vec<Vec<u32>>,
    pub dropped: usize,
}

pub fn build_anchor_grid(
    samples: &SampleBatch,
    spec: &GridSpec,
    weights: &AnchorWeights,
    cfg: &AggregationConfig,
) -> Result<AnchorGrid, GridError> {
    let Voxelization { mut grid, members, dropped } = voxelize(samples, spec);
    aggregate_anchors(&mut grid, samples, &members, &weights.pool, cfg.weight_epsilon)?;
    sparse_conv(&mut grid, &weights.conv)?;
    Ok(AnchorGrid { grid, members, dropped })
}

//! Streaming fusion: a frame-shared static set plus per-frame dynamic sets
//! and residual refiners.

mod format;
mod range;
mod refiner;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use format::{
    deserialize_state, frame_table, naive_concatenation_len, record_bytes, serialize_state, HEADER_BYTES, RPGS_MAGIC,
    RPGS_VERSION,
};
pub use range::{fuse_dynamic_masks, split_dynamic, view_range_image, RangeImage};
pub use refiner::{
    apply_refiner, encode_input, fit_refiner, refiner_loss, Correspondence, FitOutcome, RefinerConfig, ResidualDelta,
    DELTA_DIM,
};

use crate::decoder::{GaussianPrimitive, GaussianSet, Provenance, SetKind};
use crate::frame::FramePacket;
use crate::geometry::{to_spherical, voxel_index, GridSpec, VoxelIndex};
use crate::mlp::TinyMlp;
use crate::pipeline::{Model, PipelineError};
use crate::render::{render_coverage, RenderConfig};
use crate::rng::SplitMix64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StreamError {
    #[error("not an RPGS stream")]
    BadMagic,
    #[error("unsupported RPGS version {found}")]
    VersionMismatch { found: u32 },
    #[error("RPGS stream is truncated")]
    TruncatedStream,
    #[error("invalid RPGS stream: {0}")]
    InvalidStream(String),
    #[error("invalid scene state: {0}")]
    InvalidState(String),
    #[error("refiner input width {got} does not match expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no correspondences to fit the refiner")]
    NoCorrespondences,
    #[error("frame {0} is not in the stream")]
    UnknownFrame(u32),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamConfig {
    /// Range image columns (azimuth bins).
    pub range_width: usize,
    /// Range image rows (elevation bins).
    pub range_height: usize,
    /// Dilation of dynamic flags, in range pixels.
    pub dilation: usize,
    /// Pixels with accumulated opacity below this are holes.
    pub hole_alpha: f64,
    /// Pixels below this confidence are never holes.
    pub hole_confidence: f32,
    /// Fit a refiner per frame; otherwise every refiner is the identity.
    pub refine: bool,
    pub refiner: RefinerConfig,
    pub render: RenderConfig,
    pub seed: u64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            range_width: 360,
            range_height: 180,
            dilation: 1,
            hole_alpha: 0.5,
            hole_confidence: 0.5,
            refine: true,
            refiner: RefinerConfig::default(),
            render: RenderConfig::default(),
            seed: 0,
        }
    }
}

/// Shared static primitives plus, per frame id, dynamic primitives and a
/// refiner. Every frame id has both entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneState {
    pub shared: GaussianSet,
    pub dynamic: BTreeMap<u32, GaussianSet>,
    pub refiners: BTreeMap<u32, TinyMlp>,
    pub gaussians_per_voxel: u8,
}

/// Frame `t` of a stream: refined shared part, dynamic part and their union.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub shared: GaussianSet,
    pub dynamic: GaussianSet,
    pub merged: GaussianSet,
}

impl SceneState {
    pub fn new(sh_degree: u8, gaussians_per_voxel: u8) -> Self {
        Self {
            shared: GaussianSet::new(sh_degree, Provenance { frame_id: 0, kind: SetKind::Shared }),
            dynamic: BTreeMap::new(),
            refiners: BTreeMap::new(),
            gaussians_per_voxel,
        }
    }

    pub fn frame_count(&self) -> usize {
        self.refiners.len()
    }

    pub fn validate(&self) -> Result<(), StreamError> {
        let bad = |m: String| Err(StreamError::InvalidState(m));
        if self.shared.provenance.kind != SetKind::Shared {
            return bad("shared set is not tagged shared".into());
        }
        if !self.dynamic.keys().eq(self.refiners.keys()) {
            return bad("dynamic sets and refiners cover different frames".into());
        }
        for (&id, set) in &self.dynamic {
            if set.provenance != (Provenance { frame_id: id, kind: SetKind::Dynamic }) {
                return bad(format!("dynamic set of frame {id} has provenance {:?}", set.provenance));
            }
            if set.sh_degree != self.shared.sh_degree {
                return bad(format!("frame {id} has SH degree {}", set.sh_degree));
            }
        }
        Ok(())
    }

    /// Exact length of [`serialize_state`]'s output.
    pub fn serialized_len(&self) -> usize {
        let rec = record_bytes(self.shared.sh_degree);
        HEADER_BYTES
            + rec * self.shared.len()
            + self.dynamic.values().map(|d| 12 + rec * d.len()).sum::<usize>()
            + self.refiners.values().map(TinyMlp::encoded_len).sum::<usize>()
    }

    /// `apply_refiner(shared, θᵗ) ∪ dynᵗ`.
    pub fn reconstruct(&self, frame_id: u32, cfg: &RefinerConfig) -> Result<Reconstruction, StreamError> {
        let (Some(refiner), Some(dynamic)) = (self.refiners.get(&frame_id), self.dynamic.get(&frame_id)) else {
            return Err(StreamError::UnknownFrame(frame_id));
        };
        let shared = apply_refiner(&self.shared, refiner, cfg)?;
        let mut merged = shared.clone();
        merged.provenance = Provenance { frame_id, kind: SetKind::Full };
        merged.extend_from(dynamic);
        Ok(Reconstruction { shared, dynamic: dynamic.clone(), merged })
    }
}

/// Per view, whether each pixel is confident and not explained by the
/// shared set plus the frame's dynamic set (accumulated opacity below
/// `alpha_threshold`).
pub fn detect_holes(
    state: &SceneState,
    frame: &FramePacket,
    alpha_threshold: f64,
    conf_threshold: f32,
    render: &RenderConfig,
) -> Vec<Vec<bool>> {
    let mut scene = state.shared.clone();
    if let Some(d) = state.dynamic.get(&frame.frame_id) {
        scene.extend_from(d);
    }
    frame
        .views
        .iter()
        .map(|v| {
            let alpha = if scene.is_empty() { vec![0.0; v.pixel_count()] } else { render_coverage(&scene, &v.camera, render) };
            alpha.iter().zip(&v.confidence).map(|(&a, &c)| a < alpha_threshold && c >= conf_threshold).collect()
        })
        .collect()
}

/// Correspondences between `shared` and the nearest `current` primitive in
/// the same voxel. Primitives outside the grid have none.
pub fn voxel_correspondences(shared: &GaussianSet, current: &GaussianSet, spec: &GridSpec) -> Vec<Correspondence> {
    let cell = |p: &GaussianPrimitive| voxel_index(&to_spherical(&p.position(), spec.epsilon), spec).ok();
    let mut by_cell: BTreeMap<VoxelIndex, Vec<usize>> = BTreeMap::new();
    for (i, p) in current.primitives.iter().enumerate() {
        if let Some(c) = cell(p) {
            by_cell.entry(c).or_default().push(i);
        }
    }
    shared
        .primitives
        .iter()
        .filter_map(|s| {
            let candidates = by_cell.get(&cell(s)?)?;
            let best = candidates.iter().min_by(|&&a, &&b| {
                let da = (current.primitives[a].position() - s.position()).norm_squared();
                let db = (current.primitives[b].position() - s.position()).norm_squared();
                da.total_cmp(&db)
            })?;
            Some(Correspondence { source: *s, target: current.primitives[*best] })
        })
        .collect()
}

/// Counts from one [`Streamer::ingest`] call.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestReport {
    pub frame_id: u32,
    /// Primitives of the full decode.
    pub decoded: usize,
    pub dynamic: usize,
    pub hole_pixels: usize,
    pub confident_pixels: usize,
    /// Primitives added to the shared set.
    pub added: usize,
    pub shared_after: usize,
    /// Refiner loss before and after fitting, when a fit ran.
    pub refiner_loss: Option<(f64, f64)>,
}

/// Single-writer stream builder.
#[derive(Debug, Clone)]
pub struct Streamer {
    pub model: Model,
    pub config: StreamConfig,
    pub state: SceneState,
    /// Voxels already represented in the shared set.
    occupied: BTreeSet<VoxelIndex>,
}

impl Streamer {
    pub fn new(model: Model, config: StreamConfig) -> Self {
        let state = SceneState::new(model.config.decoder.sh_degree, model.config.decoder.gaussians_per_voxel as u8);
        Self { model, config, state, occupied: BTreeSet::new() }
    }

    /// Frame 0 initializes the shared set with the static part of the full
    /// decode. Later frames replace the dynamic set, add shared primitives
    /// only from hole pixels in voxels not yet represented, and fit the
    /// frame's refiner.
    pub fn ingest(&mut self, frame: &FramePacket) -> Result<IngestReport, StreamError> {
        let cfg = self.config;
        let id = frame.frame_id;
        if self.state.refiners.contains_key(&id) {
            return Err(StreamError::InvalidState(format!("frame {id} was already ingested")));
        }
        let samples = self.model.samples(frame)?;
        let decoded = self.model.decode_samples(&samples, id)?;
        let fused = fuse_dynamic_masks(std::slice::from_ref(frame), cfg.range_width, cfg.range_height);
        let k = self.model.config.decoder.gaussians_per_voxel;
        let cells: Vec<VoxelIndex> = decoded.anchors.grid.cells.keys().copied().collect();
        let (stat, dynamic) = split_dynamic(&decoded.set, &fused, cfg.dilation);
        let static_cells: BTreeSet<VoxelIndex> = decoded
            .set
            .primitives
            .iter()
            .enumerate()
            .filter(|(_, p)| !fused.flagged_near(&p.position(), cfg.dilation))
            .map(|(i, _)| cells[i / k])
            .collect();
        let mut report = IngestReport {
            frame_id: id,
            decoded: decoded.set.len(),
            dynamic: dynamic.len(),
            hole_pixels: 0,
            confident_pixels: frame
                .views
                .iter()
                .map(|v| v.confidence.iter().filter(|&&c| c >= cfg.hole_confidence).count())
                .sum(),
            added: 0,
            shared_after: 0,
            refiner_loss: None,
        };
        let mut rng = SplitMix64::derive(cfg.seed, 0x5e_f1e5 ^ id as u64);
        let identity = cfg.refiner.identity_refiner(&mut rng);

        if self.state.frame_count() == 0 {
            self.state.shared.primitives = stat.primitives;
            self.occupied = static_cells;
            self.state.dynamic.insert(id, dynamic);
            self.state.refiners.insert(id, identity);
            report.shared_after = self.state.shared.len();
            return Ok(report);
        }

        self.state.dynamic.insert(id, dynamic);
        let holes = detect_holes(&self.state, frame, cfg.hole_alpha, cfg.hole_confidence, &cfg.render);
        report.hole_pixels = holes.iter().flatten().filter(|&&h| h).count();
        let width = frame.width as usize;
        let hole_samples = samples.select(|i| {
            let o = samples.origins[i];
            let px = o.row as usize * width + o.col as usize;
            holes[o.view as usize][px]
                && !frame.views[o.view as usize].dynamic_mask[px]
                && !fused.flagged_near(&samples.positions[i], cfg.dilation)
        });
        if !hole_samples.is_empty() {
            let fill = self.model.decode_samples(&hole_samples, id)?;
            for (c, (cell, _)) in fill.anchors.grid.cells.iter().enumerate() {
                if self.occupied.contains(cell) {
                    continue;
                }
                let new: Vec<GaussianPrimitive> = fill.set.primitives[c * k..(c + 1) * k]
                    .iter()
                    .filter(|p| !fused.flagged_near(&p.position(), cfg.dilation))
                    .copied()
                    .collect();
                if !new.is_empty() {
                    report.added += new.len();
                    self.state.shared.primitives.extend(new);
                    self.occupied.insert(*cell);
                }
            }
        }

        let mut refiner = identity;
        if cfg.refine {
            let pairs = voxel_correspondences(&self.state.shared, &stat, &self.model.config.grid);
            match fit_refiner(&refiner, &pairs, &cfg.refiner) {
                Ok(fit) => {
                    report.refiner_loss = Some((fit.losses[0], *fit.losses.last().expect("initial loss")));
                    refiner = fit.refiner;
                }
                Err(StreamError::NoCorrespondences) => {}
                Err(e) => return Err(e),
            }
        }
        self.state.refiners.insert(id, refiner);
        report.shared_after = self.state.shared.len();
        Ok(report)
    }

    pub fn into_state(self) -> SceneState {
        self.state
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::ModelConfig;
    use crate::scenegen::{generate_sequence, LayoutParams, RigSpec, SynthOptions, SyntheticScene};

    fn frames(with_mover: bool, n: u32, w: u32, h: u32) -> Vec<FramePacket> {
        let scene = SyntheticScene::open_air(2, &LayoutParams { with_mover, ..Default::default() });
        let rig = RigSpec { width: w, height: h, ..Default::default() };
        generate_sequence(&scene, &rig, SynthOptions::default(), n, 2).unwrap().0
    }

    fn streamer() -> Streamer {
        Streamer::new(Model::seeded(ModelConfig::default(), 8, 5), StreamConfig::default())
    }

    #[test]
    fn empty_state_marks_all_confident_pixels() {
        let f = &frames(false, 1, 48, 36)[0];
        let holes = detect_holes(&SceneState::new(1, 2), f, 0.5, 0.5, &RenderConfig::default());
        for (v, h) in f.views.iter().zip(&holes) {
            for (px, &hole) in h.iter().enumerate() {
                assert_eq!(hole, v.confidence[px] >= 0.5);
            }
        }
    }

    #[test]
    fn identical_frame_changes_only_the_refiner() {
        let fs = frames(false, 1, 96, 72);
        let mut s = streamer();
        s.ingest(&fs[0]).unwrap();
        let before = s.state.clone();
        let mut again = fs[0].clone();
        again.frame_id = 1;
        let report = s.ingest(&again).unwrap();
        assert_eq!(s.state.shared, before.shared);
        assert!(s.state.dynamic[&1].is_empty());
        assert_eq!(report.added, 0);
        let (l0, l1) = report.refiner_loss.unwrap();
        assert_eq!((l0, l1), (0.0, 0.0));
        assert_eq!(apply_refiner(&s.state.shared, &s.state.refiners[&1], &s.config.refiner).unwrap(), s.state.shared);
        assert!(matches!(s.ingest(&again), Err(StreamError::InvalidState(_))));
    }

    #[test]
    fn fully_dynamic_frame_leaves_shared_untouched() {
        let fs = frames(false, 2, 96, 72);
        let mut s = streamer();
        s.ingest(&fs[0]).unwrap();
        let shared = s.state.shared.clone();
        let all = fs[1].with_masks(true);
        let report = s.ingest(&all).unwrap();
        assert_eq!(s.state.shared, shared);
        let full = s.model.decode_frame(&all).unwrap().set;
        assert_eq!(s.state.dynamic[&1].primitives, full.primitives);
        assert_eq!(report.added, 0);
    }

    #[test]
    fn reconstruct_partitions_by_provenance() {
        let fs = frames(true, 2, 96, 72);
        let mut s = streamer();
        for f in &fs {
            s.ingest(f).unwrap();
        }
        let r = s.state.reconstruct(1, &s.config.refiner).unwrap();
        assert_eq!(r.shared.provenance.kind, SetKind::Shared);
        assert_eq!(r.dynamic.provenance, Provenance { frame_id: 1, kind: SetKind::Dynamic });
        assert_eq!(r.merged.len(), r.shared.len() + r.dynamic.len());
        assert!(!r.dynamic.is_empty());
        assert_eq!(s.state.reconstruct(9, &s.config.refiner), Err(StreamError::UnknownFrame(9)));
        let bytes = serialize_state(&s.state).unwrap();
        assert_eq!(deserialize_state(&bytes).unwrap(), s.state);
    }
}

//! Deterministic synthetic scenes and a ring camera rig producing
//! ground-truth frame packets.

mod scene;

pub use scene::{Cuboid, Hit, LayoutParams, Mover, Quad, SyntheticScene, Texture};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{FramePacket, ViewData};
use crate::geometry::{CameraModel, Mat3, Vec3};
use crate::rng::{hash64, SplitMix64};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid rig: {0}")]
    InvalidRig(String),
}

/// Cameras on a horizontal ring around the rig origin, each looking
/// outward along its yaw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RigSpec {
    pub yaws_deg: Vec<f64>,
    pub ring_radius: f64,
    pub hfov_deg: f64,
    pub vfov_deg: f64,
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    /// Constant velocity of the rig base in the world frame (m/s).
    pub base_velocity: [f64; 3],
}

impl Default for RigSpec {
    fn default() -> Self {
        Self {
            yaws_deg: vec![0.0, 60.0, 120.0, 180.0, -120.0, -60.0],
            ring_radius: 0.089,
            hfov_deg: 118.0,
            vfov_deg: 92.0,
            width: 518,
            height: 406,
            fps: 10.0,
            base_velocity: [0.0; 3],
        }
    }
}

impl RigSpec {
    pub fn camera_count(&self) -> usize {
        self.yaws_deg.len()
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: &str| Err(SceneError::InvalidRig(m.into()));
        if self.yaws_deg.is_empty() {
            return bad("no cameras");
        }
        for (i, a) in self.yaws_deg.iter().enumerate() {
            for b in &self.yaws_deg[..i] {
                if ((a - b).rem_euclid(360.0)).abs() < 1e-9 {
                    return bad("yaw angles must be distinct");
                }
            }
        }
        for fov in [self.hfov_deg, self.vfov_deg] {
            if !(fov > 0.0 && fov < 180.0) {
                return bad("fields of view must lie in (0, 180) degrees");
            }
        }
        if self.width == 0 || self.height == 0 {
            return bad("empty image size");
        }
        if !(self.ring_radius >= 0.0 && self.fps > 0.0) {
            return bad("ring radius must be non-negative and frame rate positive");
        }
        Ok(())
    }

    pub fn frame_time(&self, frame: u32) -> f64 {
        frame as f64 / self.fps
    }

    /// Camera models at `time`, in the world frame (the rig frame at time 0).
    pub fn cameras_at(&self, time: f64) -> Vec<CameraModel> {
        let base = Vec3::from(self.base_velocity) * time;
        let fx = 0.5 * self.width as f64 / (0.5 * self.hfov_deg.to_radians()).tan();
        let fy = 0.5 * self.height as f64 / (0.5 * self.vfov_deg.to_radians()).tan();
        let (cx, cy) = (0.5 * self.width as f64, 0.5 * self.height as f64);
        self.yaws_deg
            .iter()
            .map(|yaw| {
                let (s, c) = yaw.to_radians().sin_cos();
                // Rows: right, down, forward.
                let r = Mat3::new(s, -c, 0.0, 0.0, 0.0, -1.0, c, s, 0.0);
                let center = base + Vec3::new(c, s, 0.0) * self.ring_radius;
                CameraModel { fx, fy, cx, cy, rotation: r, translation: -(r * center), width: self.width, height: self.height }
            })
            .collect()
    }
}

/// Sensor options of the generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthOptions {
    pub feature_dim: usize,
    /// Standard deviation of additive depth noise (meters).
    pub depth_jitter: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self { feature_dim: 8, depth_jitter: 0.0 }
    }
}

/// Ground truth for one generated frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameLabels {
    pub time: f64,
    /// Mover placement at this frame.
    pub mover: Option<Cuboid>,
    /// Per view, the hit face id of every pixel (`u32::MAX` for sky).
    pub face_ids: Vec<Vec<u32>>,
}

/// Deterministic per-face feature vector in [-1, 1].
pub fn face_feature(face_id: u32, k: usize) -> f32 {
    let h = hash64(((face_id as u64) << 16) ^ k as u64 ^ 0xfea7_0000_0000);
    ((h >> 40) as f64 / (1u64 << 24) as f64 * 2.0 - 1.0) as f32
}

/// Frame-by-frame generator; frames can be produced in any order.
pub struct SequenceGenerator<'a> {
    pub scene: &'a SyntheticScene,
    pub rig: &'a RigSpec,
    pub options: SynthOptions,
    pub seed: u64,
}

impl<'a> SequenceGenerator<'a> {
    pub fn new(scene: &'a SyntheticScene, rig: &'a RigSpec, options: SynthOptions, seed: u64) -> Result<Self, SceneError> {
        scene.validate().map_err(SceneError::InvalidScene)?;
        rig.validate()?;
        if !(options.depth_jitter >= 0.0) {
            return Err(SceneError::InvalidScene("depth jitter must be non-negative".into()));
        }
        Ok(Self { scene, rig, options, seed })
    }

    pub fn frame(&self, frame_id: u32) -> (FramePacket, FrameLabels) {
        let time = self.rig.frame_time(frame_id);
        let cams = self.rig.cameras_at(time);
        let (w, h) = (self.rig.width as usize, self.rig.height as usize);
        let c = self.options.feature_dim;
        let mut views = Vec::with_capacity(cams.len());
        let mut face_ids = Vec::with_capacity(cams.len());
        for (vi, cam) in cams.into_iter().enumerate() {
            let origin = cam.center();
            let rt = cam.rotation.transpose();
            let hits: Vec<Option<Hit>> = (0..w * h)
                .into_par_iter()
                .map(|px| {
                    let (row, col) = (px / w, px % w);
                    let d = Vec3::new((col as f64 + 0.5 - cam.cx) / cam.fx, (row as f64 + 0.5 - cam.cy) / cam.fy, 1.0);
                    self.scene.cast(&origin, &(rt * d), time)
                })
                .collect();
            let n = w * h;
            let mut view = ViewData {
                camera: cam.clone(),
                image: vec![0; 3 * n],
                points: vec![0.0; 3 * n],
                confidence: vec![0.0; n],
                features: vec![0.0; c * n],
                dynamic_mask: vec![false; n],
            };
            let mut ids = vec![u32::MAX; n];
            for (px, hit) in hits.iter().enumerate() {
                let color = hit.as_ref().map_or(self.scene.sky, |h| h.color);
                for k in 0..3 {
                    view.image[3 * px + k] = (color[k].clamp(0.0, 1.0) * 255.0).round() as u8;
                }
                let Some(hit) = hit else { continue };
                let mut pc = cam.rotation * hit.point + cam.translation;
                if self.options.depth_jitter > 0.0 {
                    let key = self.seed ^ hash64(((frame_id as u64) << 40) ^ ((vi as u64) << 32) ^ px as u64);
                    let z = pc.z + self.options.depth_jitter * SplitMix64::new(key).normal();
                    pc *= z.max(1e-3) / pc.z;
                }
                for k in 0..3 {
                    view.points[3 * px + k] = pc[k] as f32;
                }
                view.confidence[px] = 1.0;
                for k in 0..c {
                    view.features[c * px + k] = face_feature(hit.face_id, k);
                }
                view.dynamic_mask[px] = hit.dynamic;
                ids[px] = hit.face_id;
            }
            views.push(view);
            face_ids.push(ids);
        }
        let packet = FramePacket { frame_id, width: self.rig.width, height: self.rig.height, feature_dim: c, views };
        let labels = FrameLabels { time, mover: self.scene.mover.as_ref().map(|m| m.body_at(time)), face_ids };
        (packet, labels)
    }
}

/// All frames `0..frames` at once. Use [`SequenceGenerator`] for long
/// sequences.
pub fn generate_sequence(
    scene: &SyntheticScene,
    rig: &RigSpec,
    options: SynthOptions,
    frames: u32,
    seed: u64,
) -> Result<(Vec<FramePacket>, Vec<FrameLabels>), SceneError> {
    let gen = SequenceGenerator::new(scene, rig, options, seed)?;
    Ok((0..frames).map(|f| gen.frame(f)).unzip())
}

/// Stratified uniform sampling of every static surface: each quad is cut
/// into `round(extent·√density)` cells per side with one jittered sample
/// per cell.
pub fn ground_truth_cloud(scene: &SyntheticScene, density: f64, seed: u64) -> Vec<Vec3> {
    assert!(density > 0.0, "density must be positive");
    let per_m = density.sqrt();
    let mut out = Vec::new();
    for (qi, q) in scene.static_quads().iter().enumerate() {
        let mut rng = SplitMix64::derive(seed, qi as u64);
        let na = (((q.hi[0] - q.lo[0]) * per_m).round() as usize).max(1);
        let nb = (((q.hi[1] - q.lo[1]) * per_m).round() as usize).max(1);
        let (sa, sb) = ((q.hi[0] - q.lo[0]) / na as f64, (q.hi[1] - q.lo[1]) / nb as f64);
        for i in 0..na {
            for j in 0..nb {
                let a = q.lo[0] + (i as f64 + rng.next_f64()) * sa;
                let b = q.lo[1] + (j as f64 + rng.next_f64()) * sb;
                out.push(q.point(a, b));
            }
        }
    }
    out
}

use std::f64::consts::{PI, TAU};

use crate::decoder::{GaussianSet, Provenance, SetKind};
use crate::frame::FramePacket;
use crate::geometry::{camera_to_robot, to_spherical, Vec3, DEFAULT_EPSILON};

/// Panoramic (θ, φ) raster of the robot frame. Column 0 starts at θ = −π,
/// row 0 at φ = −π/2.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeImage {
    pub width: usize,
    pub height: usize,
    /// Minimum range per pixel in meters; `+∞` where empty.
    pub ranges: Vec<f64>,
    pub dynamic: Vec<bool>,
}

impl RangeImage {
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "range image needs a positive size");
        Self { width, height, ranges: vec![f64::INFINITY; width * height], dynamic: vec![false; width * height] }
    }

    /// Pixel (col, row) holding the direction of `p`.
    pub fn pixel_of(&self, p: &Vec3) -> (usize, usize) {
        let s = to_spherical(p, DEFAULT_EPSILON);
        let col = (((s.theta + PI) / TAU * self.width as f64).floor().max(0.0) as usize).min(self.width - 1);
        let row = (((s.phi + PI / 2.0) / PI * self.height as f64).floor().max(0.0) as usize).min(self.height - 1);
        (col, row)
    }

    /// Records a flagged point; the pixel keeps the minimum range.
    pub fn mark(&mut self, p: &Vec3) {
        let (col, row) = self.pixel_of(p);
        let i = row * self.width + col;
        self.dynamic[i] = true;
        self.ranges[i] = self.ranges[i].min(p.norm());
    }

    /// Per-pixel union of flags, minimum of ranges.
    pub fn union(&mut self, other: &RangeImage) {
        assert_eq!((self.width, self.height), (other.width, other.height), "range image size mismatch");
        for i in 0..self.ranges.len() {
            self.dynamic[i] |= other.dynamic[i];
            self.ranges[i] = self.ranges[i].min(other.ranges[i]);
        }
    }

    pub fn flag_count(&self) -> usize {
        self.dynamic.iter().filter(|&&d| d).count()
    }

    /// Whether a flag lies within `margin` pixels (Chebyshev distance,
    /// azimuth wraps around) of the pixel containing `p`.
    pub fn flagged_near(&self, p: &Vec3, margin: usize) -> bool {
        let (col, row) = self.pixel_of(p);
        let m = margin as i64;
        let (w, h) = (self.width as i64, self.height as i64);
        for dr in -m..=m {
            let r = row as i64 + dr;
            if !(0..h).contains(&r) {
                continue;
            }
            for dc in -m.min(w / 2)..=m.min((w - 1) / 2) {
                let c = (col as i64 + dc).rem_euclid(w);
                if self.dynamic[(r * w + c) as usize] {
                    return true;
                }
            }
        }
        false
    }
}

/// Range image of the masked pixels of one view.
pub fn view_range_image(frame: &FramePacket, view: usize, width: usize, height: usize) -> RangeImage {
    let mut img = RangeImage::new(width, height);
    let v = &frame.views[view];
    for px in 0..v.pixel_count() {
        if !v.dynamic_mask[px] {
            continue;
        }
        let q = v.point(px);
        let p = camera_to_robot(&v.camera, &Vec3::new(q[0] as f64, q[1] as f64, q[2] as f64));
        if p.iter().all(|c| c.is_finite()) {
            img.mark(&p);
        }
    }
    img
}

/// Lifts masked pixels of every view to the robot frame and fuses the
/// per-view range images by union.
pub fn fuse_dynamic_masks(frames: &[FramePacket], width: usize, height: usize) -> RangeImage {
    let mut fused = RangeImage::new(width, height);
    for frame in frames {
        for view in 0..frame.views.len() {
            fused.union(&view_range_image(frame, view, width, height));
        }
    }
    fused
}

/// Partition into (static, dynamic) by the flags around each center.
/// Input order is preserved within each part.
pub fn split_dynamic(set: &GaussianSet, fused: &RangeImage, margin: usize) -> (GaussianSet, GaussianSet) {
    let frame_id = set.provenance.frame_id;
    let mut stat = GaussianSet::new(set.sh_degree, Provenance { frame_id, kind: SetKind::Shared });
    let mut dynamic = GaussianSet::new(set.sh_degree, Provenance { frame_id, kind: SetKind::Dynamic });
    for p in &set.primitives {
        if fused.flagged_near(&p.position(), margin) {
            dynamic.primitives.push(*p);
        } else {
            stat.primitives.push(*p);
        }
    }
    (stat, dynamic)
}

//! Per-time-step multi-view inputs.

use crate::geometry::CameraModel;

/// One calibrated view: RGB image plus the dense per-pixel maps predicted
/// (or, for synthetic data, ray cast) for it. All maps are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewData {
    pub camera: CameraModel,
    /// `H·W·3` RGB bytes.
    pub image: Vec<u8>,
    /// `H·W·3` camera-frame points in meters.
    pub points: Vec<f32>,
    /// `H·W` confidences in [0, 1].
    pub confidence: Vec<f32>,
    /// `H·W·C` dense features.
    pub features: Vec<f32>,
    /// `H·W` dynamic flags; all false when no mask was predicted.
    pub dynamic_mask: Vec<bool>,
}

impl ViewData {
    pub fn pixel_count(&self) -> usize {
        self.camera.width as usize * self.camera.height as usize
    }

    pub fn point(&self, pixel: usize) -> [f32; 3] {
        let p = &self.points[3 * pixel..3 * pixel + 3];
        [p[0], p[1], p[2]]
    }

    pub fn rgb(&self, pixel: usize) -> [f64; 3] {
        let c = &self.image[3 * pixel..3 * pixel + 3];
        [c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0]
    }

    pub fn has_mask(&self) -> bool {
        self.dynamic_mask.iter().any(|&m| m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FramePacket {
    pub frame_id: u32,
    pub width: u32,
    pub height: u32,
    pub feature_dim: usize,
    pub views: Vec<ViewData>,
}

impl FramePacket {
    /// Checks that every map matches the shared `H×W` (and `C`) layout and
    /// that confidences lie in [0, 1].
    pub fn validate(&self) -> Result<(), String> {
        let n = self.width as usize * self.height as usize;
        for (i, v) in self.views.iter().enumerate() {
            if v.camera.width != self.width || v.camera.height != self.height {
                return Err(format!("view {i}: camera size differs from frame size"));
            }
            let checks = [
                ("image", v.image.len(), 3 * n),
                ("points", v.points.len(), 3 * n),
                ("confidence", v.confidence.len(), n),
                ("features", v.features.len(), self.feature_dim * n),
                ("mask", v.dynamic_mask.len(), n),
            ];
            for (name, got, want) in checks {
                if got != want {
                    return Err(format!("view {i}: {name} has {got} values, expected {want}"));
                }
            }
            if v.confidence.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(format!("view {i}: confidence outside [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn view_count(&self) -> usize {
        self.views.len()
    }

    /// Copy with every dynamic mask replaced.
    pub fn with_masks(&self, fill: bool) -> FramePacket {
        let mut out = self.clone();
        for v in &mut out.views {
            v.dynamic_mask.iter_mut().for_each(|m| *m = fill);
        }
        out
    }
}

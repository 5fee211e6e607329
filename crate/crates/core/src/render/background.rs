use serde::{Deserialize, Serialize};

use crate::frame::ViewData;
use crate::geometry::{CameraModel, Vec3};

/// Color seen where splat coverage is incomplete.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Background {
    Solid([f64; 3]),
    Elevation(ElevationProfile),
}

impl Background {
    pub fn color_at(&self, cam: &CameraModel, col: usize, row: usize) -> [f64; 3] {
        match self {
            Background::Solid(c) => *c,
            Background::Elevation(p) => {
                let d = Vec3::new((col as f64 + 0.5 - cam.cx) / cam.fx, (row as f64 + 0.5 - cam.cy) / cam.fy, 1.0);
                p.color((cam.rotation.transpose() * d).normalize().z.asin())
            }
        }
    }
}

/// Mean color per elevation band of the robot frame (z up),
/// azimuth-independent. A band averages its pixels without geometry
/// (zero confidence) when it has any, otherwise all its pixels. Bands no
/// pixel fell into copy the nearest observed band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElevationProfile {
    pub step_deg: f64,
    /// Band colors from -90° upward.
    pub colors: Vec<[f64; 3]>,
}

impl ElevationProfile {
    /// Averages every pixel of `views`. Returns `None` without pixels.
    pub fn from_views(views: &[ViewData], step_deg: f64) -> Option<Self> {
        assert!(step_deg > 0.0 && step_deg <= 180.0);
        let bands = (180.0 / step_deg).ceil() as usize;
        // Index 0: all pixels, 1: pixels without geometry.
        let mut sum = vec![[[0.0f64; 3]; 2]; bands];
        let mut count = vec![[0u64; 2]; bands];
        for view in views {
            let cam = &view.camera;
            let rt = cam.rotation.transpose();
            let w = cam.width as usize;
            for px in 0..view.pixel_count() {
                let d = Vec3::new(((px % w) as f64 + 0.5 - cam.cx) / cam.fx, ((px / w) as f64 + 0.5 - cam.cy) / cam.fy, 1.0);
                let elev = (rt * d).normalize().z.asin().to_degrees();
                let b = (((elev + 90.0) / step_deg) as usize).min(bands - 1);
                let c = view.rgb(px);
                let empty = view.confidence[px] <= 0.0;
                for slot in 0..1 + empty as usize {
                    for k in 0..3 {
                        sum[b][slot][k] += c[k];
                    }
                    count[b][slot] += 1;
                }
            }
        }
        let filled: Vec<usize> = (0..bands).filter(|&b| count[b][0] > 0).collect();
        if filled.is_empty() {
            return None;
        }
        let colors = (0..bands)
            .map(|b| {
                let src = *filled.iter().min_by_key(|&&f| (f as i64 - b as i64).unsigned_abs()).expect("non-empty");
                let slot = (count[src][1] > 0) as usize;
                sum[src][slot].map(|s| s / count[src][slot] as f64)
            })
            .collect();
        Some(Self { step_deg, colors })
    }

    /// Linear interpolation between band centers; `elevation` in radians.
    pub fn color(&self, elevation: f64) -> [f64; 3] {
        let x = (elevation.to_degrees() + 90.0) / self.step_deg - 0.5;
        let last = self.colors.len() - 1;
        let i0 = (x.floor().max(0.0) as usize).min(last);
        let i1 = (i0 + 1).min(last);
        let t = (x - i0 as f64).clamp(0.0, 1.0);
        let (a, b) = (self.colors[i0], self.colors[i1]);
        [0, 1, 2].map(|k| a[k] + t * (b[k] - a[k]))
    }
}

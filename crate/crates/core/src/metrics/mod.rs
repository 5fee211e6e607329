//! Evaluation metrics: scale-aware point loss, normal loss, Chamfer
//! distances and image quality.

mod chamfer;
mod image;
mod losses;

pub use chamfer::{chamfer_metrics, mean_nearest_distance, ChamferResult};
pub use image::{mse, psnr, ssim, SSIM_SIGMA, SSIM_WINDOW};
pub use losses::{
    normal_loss, normals_from_pointmap, point_loss, solve_scale, total_loss, LidarTargets, LossComponents,
    LossWeights, NormalMap, SCALE_BRACKET,
};

use std::fmt::Write;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no target points")]
    EmptyTargets,
    #[error("no pixel is valid in both normal maps")]
    EmptyMask,
    #[error("empty point cloud")]
    EmptyCloud,
    #[error("image dimensions differ")]
    DimensionMismatch,
    #[error("image smaller than the SSIM window")]
    ImageTooSmall,
    #[error("loss weights must be non-negative")]
    NegativeWeight,
}

/// `name=value` lines. Infinite values print as `inf`.
pub fn format_metrics(entries: &[(&str, f64)]) -> String {
    let mut s = String::new();
    for (name, v) in entries {
        if v.is_infinite() {
            let _ = writeln!(s, "{name}={}", if *v > 0.0 { "inf" } else { "-inf" });
        } else {
            let _ = writeln!(s, "{name}={v:.6}");
        }
    }
    s
}

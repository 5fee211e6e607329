//! Forward-only CPU splat rasterizer.

mod background;
mod sh;

pub use background::{Background, ElevationProfile};
pub use sh::evaluate_sh;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoder::GaussianSet;
use crate::geometry::{robot_to_camera, CameraModel, Mat3};

const TILE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    /// Splat contributions below this opacity are skipped.
    pub min_alpha: f64,
    /// Compositing stops once transmittance falls below this.
    pub min_transmittance: f64,
    /// Half-extent of the screen-space bounding box in standard deviations.
    pub cull_sigma: f64,
    /// Added to the diagonal of every 2D covariance (px²).
    pub cov_regularizer: f64,
    /// Primitives closer than this view depth are dropped (meters).
    pub near: f64,
    /// The projection Jacobian is evaluated with the view ray clamped to
    /// this multiple of the image half-extent, which bounds the footprint
    /// of primitives far outside the frustum.
    pub frustum_guard: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { min_alpha: 1.0 / 255.0, min_transmittance: 1e-4, cull_sigma: 3.0, cov_regularizer: 1e-6, near: 0.2, frustum_guard: 1.3 }
    }
}

/// Row-major RGB image with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl RgbImage {
    pub fn filled(width: u32, height: u32, rgb: [f64; 3]) -> Self {
        let n = width as usize * height as usize;
        Self { width, height, data: rgb.iter().copied().cycle().take(3 * n).collect() }
    }

    pub fn from_u8(width: u32, height: u32, bytes: &[u8]) -> Self {
        Self { width, height, data: bytes.iter().map(|&b| b as f64 / 255.0).collect() }
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    pub fn pixel(&self, col: u32, row: u32) -> [f64; 3] {
        let i = 3 * (row as usize * self.width as usize + col as usize);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub color: RgbImage,
    /// Alpha-weighted mean view depth; 0 where nothing was drawn.
    pub depth: Vec<f64>,
    pub alpha: Vec<f64>,
}

/// Screen-space splat.
#[derive(Debug, Clone, Copy)]
struct Splat {
    u: f64,
    v: f64,
    /// Inverse 2D covariance (a, b, c) of `[[a, b], [b, c]]`.
    conic: [f64; 3],
    opacity: f64,
    depth: f64,
    color: [f64; 3],
    /// Inclusive pixel bounds.
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
}

fn project_splats(set: &GaussianSet, cam: &CameraModel, cfg: &RenderConfig, with_color: bool) -> Vec<(usize, Splat)> {
    let center = cam.center();
    let (w, h) = (cam.width as f64, cam.height as f64);
    let mut splats: Vec<(usize, Splat)> = set
        .primitives
        .par_iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let mu = p.position();
            let pc = robot_to_camera(cam, &mu);
            if !(pc.z > cfg.near) {
                return None;
            }
            let opacity = p.opacity();
            if opacity < cfg.min_alpha {
                return None;
            }
            let z = pc.z;
            let g = cfg.frustum_guard;
            let x = (pc.x / z).clamp(-g * cam.cx / cam.fx, g * (w - cam.cx) / cam.fx) * z;
            let y = (pc.y / z).clamp(-g * cam.cy / cam.fy, g * (h - cam.cy) / cam.fy) * z;
            let j = nalgebra::Matrix2x3::new(
                cam.fx / z,
                0.0,
                -cam.fx * x / (z * z),
                0.0,
                cam.fy / z,
                -cam.fy * y / (z * z),
            );
            let r: Mat3 = cam.rotation;
            let cov2 = j * r * p.covariance() * r.transpose() * j.transpose();
            let a = cov2[(0, 0)] + cfg.cov_regularizer;
            let b = 0.5 * (cov2[(0, 1)] + cov2[(1, 0)]);
            let c = cov2[(1, 1)] + cfg.cov_regularizer;
            let det = a * c - b * b;
            if !(det > 0.0) {
                return None;
            }
            let u = cam.fx * pc.x / z + cam.cx;
            let v = cam.fy * pc.y / z + cam.cy;
            let (ru, rv) = (cfg.cull_sigma * a.sqrt(), cfg.cull_sigma * c.sqrt());
            // Pixel (col, row) has its center at (col + 0.5, row + 0.5).
            let x0 = (u - ru - 0.5).ceil().max(0.0);
            let x1 = (u + ru - 0.5).floor().min(w - 1.0);
            let y0 = (v - rv - 0.5).ceil().max(0.0);
            let y1 = (v + rv - 0.5).floor().min(h - 1.0);
            if !(x0 <= x1 && y0 <= y1) {
                return None;
            }
            let color = if with_color {
                let d = (mu - center).normalize();
                evaluate_sh(&p.sh_dc, &p.sh_rest, set.sh_degree, &d)
            } else {
                [0.0; 3]
            };
            Some((
                i,
                Splat {
                    u,
                    v,
                    conic: [c / det, -b / det, a / det],
                    opacity,
                    depth: z,
                    color,
                    x0: x0 as usize,
                    x1: x1 as usize,
                    y0: y0 as usize,
                    y1: y1 as usize,
                },
            ))
        })
        .collect();
    // Front to back; equal depths keep primitive order.
    splats.sort_by(|a, b| a.1.depth.total_cmp(&b.1.depth).then(a.0.cmp(&b.0)));
    splats
}

struct PixelOut {
    color: [f64; 3],
    depth: f64,
    alpha: f64,
}

fn composite(list: &[u32], splats: &[(usize, Splat)], col: usize, row: usize, cfg: &RenderConfig, bg: &Background, cam: &CameraModel) -> PixelOut {
    let (px, py) = (col as f64 + 0.5, row as f64 + 0.5);
    let mut t = 1.0;
    let mut color = [0.0; 3];
    let mut depth = 0.0;
    let mut alpha = 0.0;
    for &si in list {
        let s = &splats[si as usize].1;
        if col < s.x0 || col > s.x1 || row < s.y0 || row > s.y1 {
            continue;
        }
        let (dx, dy) = (px - s.u, py - s.v);
        let power = -0.5 * (s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy);
        if power > 0.0 {
            continue;
        }
        let a = s.opacity * power.exp();
        if a < cfg.min_alpha {
            continue;
        }
        let wgt = a * t;
        for k in 0..3 {
            color[k] += s.color[k] * wgt;
        }
        depth += s.depth * wgt;
        alpha += wgt;
        t *= 1.0 - a;
        if t < cfg.min_transmittance {
            break;
        }
    }
    if t > 0.0 {
        let b = bg.color_at(cam, col, row);
        for k in 0..3 {
            color[k] += t * b[k];
        }
    }
    PixelOut { color, depth: if alpha > 0.0 { depth / alpha } else { 0.0 }, alpha }
}

fn rasterize(set: &GaussianSet, cam: &CameraModel, bg: &Background, cfg: &RenderConfig, with_color: bool) -> RenderedImage {
    let (w, h) = (cam.width as usize, cam.height as usize);
    let splats = project_splats(set, cam, cfg, with_color);
    let (tw, th) = (w.div_ceil(TILE), h.div_ceil(TILE));
    // Tile lists keep the global depth order.
    let mut tiles: Vec<Vec<u32>> = vec![Vec::new(); tw * th];
    for (si, (_, s)) in splats.iter().enumerate() {
        for ty in s.y0 / TILE..=s.y1 / TILE {
            for tx in s.x0 / TILE..=s.x1 / TILE {
                tiles[ty * tw + tx].push(si as u32);
            }
        }
    }
    let rows: Vec<Vec<PixelOut>> = (0..h)
        .into_par_iter()
        .map(|row| {
            let ty = row / TILE;
            (0..w)
                .map(|col| {
                    let list = &tiles[ty * tw + col / TILE];
                    composite(list, &splats, col, row, cfg, bg, cam)
                })
                .collect()
        })
        .collect();
    let mut color = Vec::with_capacity(3 * w * h);
    let mut depth = Vec::with_capacity(w * h);
    let mut alpha = Vec::with_capacity(w * h);
    for p in rows.into_iter().flatten() {
        color.extend_from_slice(&p.color);
        depth.push(p.depth);
        alpha.push(p.alpha);
    }
    RenderedImage { color: RgbImage { width: cam.width, height: cam.height, data: color }, depth, alpha }
}

pub fn render(set: &GaussianSet, cam: &CameraModel, background: [f64; 3], cfg: &RenderConfig) -> RenderedImage {
    rasterize(set, cam, &Background::Solid(background), cfg, true)
}

/// [`render`] over a direction-dependent background.
pub fn render_with_background(set: &GaussianSet, cam: &CameraModel, background: &Background, cfg: &RenderConfig) -> RenderedImage {
    rasterize(set, cam, background, cfg, true)
}

/// Accumulated opacity only.
pub fn render_coverage(set: &GaussianSet, cam: &CameraModel, cfg: &RenderConfig) -> Vec<f64> {
    rasterize(set, cam, &Background::Solid([0.0; 3]), cfg, false).alpha
}

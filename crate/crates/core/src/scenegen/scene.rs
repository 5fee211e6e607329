use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Texture {
    Solid([f64; 3]),
    /// Alternating colors on a square grid of the given period (meters).
    Checker { a: [f64; 3], b: [f64; 3], period: f64 },
}

impl Texture {
    fn at(&self, u: f64, v: f64) -> [f64; 3] {
        match *self {
            Texture::Solid(c) => c,
            Texture::Checker { a, b, period } => {
                let k = (u / period).floor() as i64 + (v / period).floor() as i64;
                if k.rem_euclid(2) == 0 {
                    a
                } else {
                    b
                }
            }
        }
    }
}

/// Axis-aligned rectangle `x[axis] = coord`, spanning `[lo, hi]` on the
/// two remaining axes (in increasing axis order).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quad {
    pub axis: usize,
    pub coord: f64,
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub texture: Texture,
}

impl Quad {
    pub fn other_axes(&self) -> [usize; 2] {
        match self.axis {
            0 => [1, 2],
            1 => [0, 2],
            _ => [0, 1],
        }
    }

    pub fn area(&self) -> f64 {
        (self.hi[0] - self.lo[0]) * (self.hi[1] - self.lo[1])
    }

    pub fn point(&self, a: f64, b: f64) -> Vec3 {
        let mut p = Vec3::zeros();
        let [i, j] = self.other_axes();
        p[self.axis] = self.coord;
        p[i] = a;
        p[j] = b;
        p
    }
}

/// Axis-aligned box with one color per face, ordered
/// `-x, +x, -y, +y, -z, +z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cuboid {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub face_colors: [[f64; 3]; 6],
}

impl Cuboid {
    pub fn translated(&self, d: &Vec3) -> Cuboid {
        Cuboid {
            min: [self.min[0] + d.x, self.min[1] + d.y, self.min[2] + d.z],
            max: [self.max[0] + d.x, self.max[1] + d.y, self.max[2] + d.z],
            face_colors: self.face_colors,
        }
    }

    pub fn faces(&self) -> [Quad; 6] {
        let mut out = [Quad { axis: 0, coord: 0.0, lo: [0.0; 2], hi: [0.0; 2], texture: Texture::Solid([0.0; 3]) }; 6];
        for f in 0..6 {
            let axis = f / 2;
            let q = &mut out[f];
            q.axis = axis;
            q.coord = if f % 2 == 0 { self.min[axis] } else { self.max[axis] };
            let [i, j] = q.other_axes();
            q.lo = [self.min[i], self.min[j]];
            q.hi = [self.max[i], self.max[j]];
            q.texture = Texture::Solid(self.face_colors[f]);
        }
        out
    }

    pub fn contains(&self, p: &Vec3, margin: f64) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] - margin && p[a] <= self.max[a] + margin)
    }
}

/// Box moving at constant speed, reflecting between `start` and
/// `start + extent` (ping-pong).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mover {
    pub body: Cuboid,
    /// Unit direction times travel length of one leg (meters).
    pub extent: [f64; 3],
    /// Speed in m/s.
    pub speed: f64,
}

impl Mover {
    pub fn offset_at(&self, time: f64) -> Vec3 {
        let ext = Vec3::from(self.extent);
        let len = ext.norm();
        if len == 0.0 || self.speed == 0.0 {
            return Vec3::zeros();
        }
        let s = (self.speed * time).rem_euclid(2.0 * len);
        let along = if s <= len { s } else { 2.0 * len - s };
        ext * (along / len)
    }

    pub fn body_at(&self, time: f64) -> Cuboid {
        self.body.translated(&self.offset_at(time))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub quads: Vec<Quad>,
    pub boxes: Vec<Cuboid>,
    pub mover: Option<Mover>,
    /// Direction toward the light.
    pub light_dir: [f64; 3],
    pub ambient: f64,
    /// Color of rays that hit nothing.
    pub sky: [f64; 3],
    /// World bounds; the mover must stay inside.
    pub bounds_min: [f64; 3],
    pub bounds_max: [f64; 3],
}

/// First surface hit along a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: Vec3,
    pub face_id: u32,
    pub color: [f64; 3],
    pub dynamic: bool,
}

/// Face ids: static boxes first (six per box), then quads, then the mover.
impl SyntheticScene {
    pub fn static_face_count(&self) -> u32 {
        (6 * self.boxes.len() + self.quads.len()) as u32
    }

    pub fn validate(&self) -> Result<(), String> {
        for b in self.boxes.iter().chain(self.mover.iter().map(|m| &m.body)) {
            if (0..3).any(|a| !(b.max[a] > b.min[a])) {
                return Err("box with non-positive extent".into());
            }
        }
        for q in &self.quads {
            if !(q.hi[0] > q.lo[0] && q.hi[1] > q.lo[1]) || q.axis > 2 {
                return Err("degenerate quad".into());
            }
        }
        if Vec3::from(self.light_dir).norm() == 0.0 {
            return Err("zero light direction".into());
        }
        if let Some(m) = &self.mover {
            if !(m.speed >= 0.0) {
                return Err("negative mover speed".into());
            }
            let end = m.body.translated(&Vec3::from(m.extent));
            for b in [&m.body, &end] {
                if (0..3).any(|a| b.min[a] < self.bounds_min[a] || b.max[a] > self.bounds_max[a]) {
                    return Err("mover trajectory leaves the world bounds".into());
                }
            }
        }
        Ok(())
    }

    /// All static surfaces as quads, in face-id order.
    pub fn static_quads(&self) -> Vec<Quad> {
        let mut out: Vec<Quad> = self.boxes.iter().flat_map(|b| b.faces()).collect();
        out.extend_from_slice(&self.quads);
        out
    }

    fn shade(&self, base: [f64; 3], axis: usize, dir: &Vec3) -> [f64; 3] {
        let mut n = Vec3::zeros();
        n[axis] = if dir[axis] > 0.0 { -1.0 } else { 1.0 };
        let l = Vec3::from(self.light_dir).normalize();
        let k = self.ambient + (1.0 - self.ambient) * n.dot(&l).max(0.0);
        base.map(|c| (c * k).clamp(0.0, 1.0))
    }

    /// Casts a ray at scene time `time`. Ties in distance go to the lower
    /// face id.
    pub fn cast(&self, origin: &Vec3, dir: &Vec3, time: f64) -> Option<Hit> {
        // (t, face id, surface, dynamic)
        let mut best: Option<(f64, u32, Quad, bool)> = None;
        let mut consider = |t: f64, id: u32, q: &dyn Fn() -> Quad, dynamic: bool| {
            if t > 1e-9 && best.as_ref().is_none_or(|b| t < b.0) {
                best = Some((t, id, q(), dynamic));
            }
        };
        for (bi, b) in self.boxes.iter().enumerate() {
            if let Some((t, f)) = intersect_box(b, origin, dir) {
                consider(t, (6 * bi + f) as u32, &|| b.faces()[f], false);
            }
        }
        let base = 6 * self.boxes.len() as u32;
        for (qi, q) in self.quads.iter().enumerate() {
            if let Some(t) = intersect_quad(q, origin, dir) {
                consider(t, base + qi as u32, &|| *q, false);
            }
        }
        if let Some(m) = &self.mover {
            let body = m.body_at(time);
            if let Some((t, f)) = intersect_box(&body, origin, dir) {
                consider(t, self.static_face_count() + f as u32, &|| body.faces()[f], true);
            }
        }
        best.map(|(t, face_id, q, dynamic)| {
            let mut point = origin + dir * t;
            // Snap onto the plane so hits satisfy the surface equation exactly.
            point[q.axis] = q.coord;
            let [i, j] = q.other_axes();
            let base = q.texture.at(point[i], point[j]);
            Hit { t, point, face_id, color: self.shade(base, q.axis, dir), dynamic }
        })
    }
}

fn intersect_quad(q: &Quad, o: &Vec3, d: &Vec3) -> Option<f64> {
    let da = d[q.axis];
    if da == 0.0 {
        return None;
    }
    let t = (q.coord - o[q.axis]) / da;
    if !(t > 0.0) {
        return None;
    }
    let [i, j] = q.other_axes();
    let (a, b) = (o[i] + t * d[i], o[j] + t * d[j]);
    (a >= q.lo[0] && a <= q.hi[0] && b >= q.lo[1] && b <= q.hi[1]).then_some(t)
}

/// Slab test for a ray starting outside the box. Returns the entry
/// distance and entry face.
fn intersect_box(b: &Cuboid, o: &Vec3, d: &Vec3) -> Option<(f64, usize)> {
    let (mut t_near, mut t_far) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut face = 0;
    for a in 0..3 {
        if d[a] == 0.0 {
            if o[a] < b.min[a] || o[a] > b.max[a] {
                return None;
            }
            continue;
        }
        let (t0, t1) = ((b.min[a] - o[a]) / d[a], (b.max[a] - o[a]) / d[a]);
        let (lo, hi, f) = if t0 <= t1 { (t0, t1, 2 * a) } else { (t1, t0, 2 * a + 1) };
        if lo > t_near {
            t_near = lo;
            face = f;
        }
        t_far = t_far.min(hi);
    }
    (t_near <= t_far && t_near > 0.0).then_some((t_near, face))
}

fn random_color(rng: &mut SplitMix64) -> [f64; 3] {
    [rng.uniform(0.15, 0.95), rng.uniform(0.15, 0.95), rng.uniform(0.15, 0.95)]
}

/// Knobs of the default open-air test layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LayoutParams {
    /// Height of the rig origin above the ground (meters).
    pub eye_height: f64,
    pub box_count: usize,
    /// Range of box distances from the rig (meters).
    pub min_distance: f64,
    pub max_distance: f64,
    pub with_mover: bool,
    pub mover_speed: f64,
    /// Checker period of the ground, or 0 for a solid ground.
    pub ground_checker: f64,
    /// The ground is a square of this half-width around the rig.
    pub ground_half_extent: f64,
}

impl Default for LayoutParams {
    fn default() -> Self {
        Self {
            eye_height: 1.6,
            box_count: 14,
            min_distance: 3.0,
            max_distance: 14.0,
            with_mover: false,
            mover_speed: 0.5,
            ground_checker: 0.0,
            ground_half_extent: 30.0,
        }
    }
}

impl SyntheticScene {
    /// Open-air layout: a ground plane, boxes of assorted sizes scattered
    /// around the rig, optionally one moving box. The rig origin is the
    /// world origin at `eye_height` above the ground.
    pub fn open_air(seed: u64, params: &LayoutParams) -> Self {
        let mut rng = SplitMix64::derive(seed, 0x5ce4e);
        let ground_z = -params.eye_height;
        let ground_color = [0.42, 0.40, 0.36];
        let texture = if params.ground_checker > 0.0 {
            Texture::Checker { a: ground_color, b: [0.30, 0.29, 0.27], period: params.ground_checker }
        } else {
            Texture::Solid(ground_color)
        };
        let half = params.ground_half_extent;
        let ground = Quad { axis: 2, coord: ground_z, lo: [-half, -half], hi: [half, half], texture };
        let mut boxes: Vec<Cuboid> = Vec::new();
        let mut attempts = 0;
        while boxes.len() < params.box_count && attempts < 10_000 {
            attempts += 1;
            let ang = rng.uniform(-std::f64::consts::PI, std::f64::consts::PI);
            let dist = rng.uniform(params.min_distance, params.max_distance);
            let (sx, sy) = (rng.uniform(0.8, 3.5), rng.uniform(0.8, 3.5));
            let height = rng.uniform(0.8, 4.5);
            let c = Vec3::new(dist * ang.cos(), dist * ang.sin(), 0.0);
            let candidate = Cuboid {
                min: [c.x - sx / 2.0, c.y - sy / 2.0, ground_z],
                max: [c.x + sx / 2.0, c.y + sy / 2.0, ground_z + height],
                face_colors: [0; 6].map(|_| random_color(&mut rng)),
            };
            // Keep a clear radius around the rig and avoid overlaps.
            let clear = (0..2).all(|a| candidate.min[a] > 1.0 || candidate.max[a] < -1.0);
            let overlaps = boxes
                .iter()
                .any(|b| (0..2).all(|a| candidate.min[a] < b.max[a] + 0.3 && candidate.max[a] > b.min[a] - 0.3));
            if clear && !overlaps {
                boxes.push(candidate);
            }
        }
        let mover = params.with_mover.then(|| {
            let size = 0.9;
            let y0 = 5.5;
            Mover {
                body: Cuboid {
                    min: [-2.0 - size / 2.0, y0 - size / 2.0, ground_z],
                    max: [-2.0 + size / 2.0, y0 + size / 2.0, ground_z + 1.4],
                    face_colors: [[0.85, 0.15, 0.1]; 6],
                },
                extent: [4.0, 0.0, 0.0],
                speed: params.mover_speed,
            }
        });
        if let Some(m) = &mover {
            // Clear the mover's lane.
            let lane = Cuboid {
                min: [m.body.min[0] - 0.5, m.body.min[1] - 0.5, ground_z],
                max: [m.body.max[0] + m.extent[0] + 0.5, m.body.max[1] + 0.5, ground_z + 10.0],
                face_colors: [[0.0; 3]; 6],
            };
            boxes.retain(|b| !(0..2).all(|a| b.min[a] < lane.max[a] && b.max[a] > lane.min[a]));
        }
        SyntheticScene {
            quads: vec![ground],
            boxes,
            mover,
            light_dir: [0.45, 0.3, 0.84],
            ambient: 0.45,
            sky: [0.62, 0.74, 0.88],
            bounds_min: [-half, -half, ground_z],
            bounds_max: [half, half, ground_z + 20.0],
        }
    }
}

//! Anchor-to-Gaussian decoding.

mod heads;
mod primitive;

pub use heads::{DecoderHeads, Head};
pub use primitive::{
    build_covariance, logit, rgb2sh, sh_rest_count, sigmoid, GaussianPrimitive, GaussianSet, Provenance, SetKind,
    MAX_SH_DEGREE, MAX_SH_REST, SH_C0, SH_C1, SH_C2,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{quat_normalize, GridSpec, Quat, Vec3, VoxelIndex};
use crate::grid::{AnchorCell, SparseSphericalGrid};
use crate::mlp::{MlpError, MlpScratch, TinyMlp};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecodeError {
    #[error("cell {0:?} has no refined feature")]
    MissingFeatures(VoxelIndex),
    #[error("raw quaternion has zero norm")]
    ZeroQuaternion,
    #[error("invalid decoder config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Mlp(#[from] MlpError),
}

/// Which heads receive `r_v / r_ref` as an extra input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadiusCue {
    pub offset: bool,
    pub opacity: bool,
    pub scale: bool,
    pub rotation: bool,
    pub dc: bool,
    pub rest: bool,
}

impl Default for RadiusCue {
    fn default() -> Self {
        Self { offset: false, opacity: false, scale: true, rotation: false, dc: false, rest: false }
    }
}

impl RadiusCue {
    pub fn enabled(&self, head: Head) -> bool {
        match head {
            Head::Offset => self.offset,
            Head::Opacity => self.opacity,
            Head::Scale => self.scale,
            Head::Rotation => self.rotation,
            Head::Dc => self.dc,
            Head::Rest => self.rest,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    /// Gaussians per voxel, K.
    pub gaussians_per_voxel: usize,
    /// Maximum per-axis offset in meters; half the voxel diagonal at the
    /// anchor radius when unset.
    pub gamma: Option<f64>,
    pub log_scale_min: f64,
    pub log_scale_max: f64,
    /// Reference radius of the scale multiplier κ(r) = max(1, r / r_ref).
    pub kappa_ref_radius: f64,
    pub sh_degree: u8,
    pub radius_cue: RadiusCue,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            gaussians_per_voxel: 2,
            gamma: None,
            log_scale_min: 0.005f64.ln(),
            log_scale_max: 0.0,
            kappa_ref_radius: 1.0,
            sh_degree: 1,
            radius_cue: RadiusCue::default(),
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        let bad = |m: &str| Err(DecodeError::InvalidConfig(m.into()));
        if self.gaussians_per_voxel == 0 || self.gaussians_per_voxel > 255 {
            return bad("gaussians_per_voxel must be in 1..=255");
        }
        if !(self.log_scale_min < self.log_scale_max) {
            return bad("log_scale_min must be below log_scale_max");
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return bad("gamma must be positive");
            }
        }
        if !(self.kappa_ref_radius > 0.0) {
            return bad("kappa_ref_radius must be positive");
        }
        if self.sh_degree > MAX_SH_DEGREE {
            return bad("SH degree above 2 is not supported");
        }
        Ok(())
    }

    pub fn head_input_dim(&self, head: Head, anchor_dim: usize) -> usize {
        anchor_dim + self.gaussians_per_voxel + self.radius_cue.enabled(head) as usize
    }

    pub fn kappa(&self, r: f64) -> f64 {
        (r / self.kappa_ref_radius).max(1.0)
    }

    pub fn gamma_at(&self, spec: &GridSpec, r: f64) -> f64 {
        self.gamma.unwrap_or_else(|| 0.5 * spec.diagonal_at(r))
    }
}

/// `x̄ + γ(2σ(raw) − 1)` per axis.
pub fn center_from_raw(anchor: &Vec3, raw: &[f64], gamma: f64) -> Vec3 {
    Vec3::new(
        anchor.x + gamma * (2.0 * sigmoid(raw[0]) - 1.0),
        anchor.y + gamma * (2.0 * sigmoid(raw[1]) - 1.0),
        anchor.z + gamma * (2.0 * sigmoid(raw[2]) - 1.0),
    )
}

pub fn opacity_from_raw(raw: f64) -> f64 {
    sigmoid(raw)
}

/// Log of `κ(r)·exp(l_min + (l_max − l_min)σ(raw))` per axis.
pub fn log_scale_from_raw(raw: &[f64], r: f64, cfg: &DecoderConfig) -> [f64; 3] {
    let lk = cfg.kappa(r).ln();
    let span = cfg.log_scale_max - cfg.log_scale_min;
    [0, 1, 2].map(|i| lk + cfg.log_scale_min + span * sigmoid(raw[i]))
}

pub fn rotation_from_raw(raw: &[f64]) -> Result<Quat, DecodeError> {
    quat_normalize([raw[0], raw[1], raw[2], raw[3]]).ok_or(DecodeError::ZeroQuaternion)
}

pub fn dc_from_raw(color: &[f64; 3], raw: &[f64]) -> [f64; 3] {
    [0, 1, 2].map(|i| rgb2sh(color[i]) + raw[i])
}

/// Per-cell decoding context: builds head inputs and evaluates heads.
struct SlotInputs<'a> {
    cfg: &'a DecoderConfig,
    cell: &'a AnchorCell,
    radius: f64,
    buf: Vec<f64>,
    scratch: MlpScratch,
}

impl<'a> SlotInputs<'a> {
    fn new(cfg: &'a DecoderConfig, cell: &'a AnchorCell) -> Result<Self, DecodeError> {
        if cell.refined.is_empty() {
            return Err(DecodeError::MissingFeatures(cell.index));
        }
        let radius = cell.radius();
        Ok(Self { cfg, cell, radius, buf: Vec::new(), scratch: MlpScratch::default() })
    }

    fn eval(&mut self, head: Head, mlp: &TinyMlp, slot: usize) -> Result<Vec<f64>, DecodeError> {
        self.buf.clear();
        self.buf.extend_from_slice(&self.cell.refined);
        self.buf.extend((0..self.cfg.gaussians_per_voxel).map(|k| (k == slot) as u8 as f64));
        if self.cfg.radius_cue.enabled(head) {
            self.buf.push(self.radius / self.cfg.kappa_ref_radius);
        }
        Ok(mlp.forward_with(&self.buf, &mut self.scratch)?.to_vec())
    }
}

/// Centers of all K slots of a cell.
pub fn decode_center(
    cell: &AnchorCell,
    head: &TinyMlp,
    spec: &GridSpec,
    cfg: &DecoderConfig,
) -> Result<Vec<Vec3>, DecodeError> {
    let mut ctx = SlotInputs::new(cfg, cell)?;
    let gamma = cfg.gamma_at(spec, ctx.radius);
    (0..cfg.gaussians_per_voxel)
        .map(|k| Ok(center_from_raw(&cell.center, &ctx.eval(Head::Offset, head, k)?, gamma)))
        .collect()
}

pub fn decode_opacity(cell: &AnchorCell, head: &TinyMlp, cfg: &DecoderConfig) -> Result<Vec<f64>, DecodeError> {
    let mut ctx = SlotInputs::new(cfg, cell)?;
    (0..cfg.gaussians_per_voxel).map(|k| Ok(opacity_from_raw(ctx.eval(Head::Opacity, head, k)?[0]))).collect()
}

/// Scales and rotations of all K slots. A degenerate rotation output is
/// reported as `ZeroQuaternion`.
pub fn decode_shape(
    cell: &AnchorCell,
    scale_head: &TinyMlp,
    rotation_head: &TinyMlp,
    cfg: &DecoderConfig,
) -> Result<Vec<([f64; 3], Quat)>, DecodeError> {
    let mut ctx = SlotInputs::new(cfg, cell)?;
    (0..cfg.gaussians_per_voxel)
        .map(|k| {
            let ls = log_scale_from_raw(&ctx.eval(Head::Scale, scale_head, k)?, ctx.radius, cfg);
            let q = rotation_from_raw(&ctx.eval(Head::Rotation, rotation_head, k)?)?;
            Ok((ls.map(f64::exp), q))
        })
        .collect()
}

/// DC and higher-order SH coefficients of all K slots.
#[allow(clippy::type_complexity)]
pub fn decode_appearance(
    cell: &AnchorCell,
    dc_head: &TinyMlp,
    rest_head: Option<&TinyMlp>,
    cfg: &DecoderConfig,
) -> Result<Vec<([f64; 3], Vec<[f64; 3]>)>, DecodeError> {
    let mut ctx = SlotInputs::new(cfg, cell)?;
    (0..cfg.gaussians_per_voxel)
        .map(|k| {
            let dc = dc_from_raw(&cell.color, &ctx.eval(Head::Dc, dc_head, k)?);
            let rest = match rest_head {
                Some(h) => ctx.eval(Head::Rest, h, k)?.chunks(3).map(|c| [c[0], c[1], c[2]]).collect(),
                None => Vec::new(),
            };
            Ok((dc, rest))
        })
        .collect()
}

fn decode_cell(
    cell: &AnchorCell,
    spec: &GridSpec,
    cfg: &DecoderConfig,
    heads: &DecoderHeads,
) -> Result<Vec<GaussianPrimitive>, DecodeError> {
    let mut ctx = SlotInputs::new(cfg, cell)?;
    let gamma = cfg.gamma_at(spec, ctx.radius);
    let mut out = Vec::with_capacity(cfg.gaussians_per_voxel);
    for k in 0..cfg.gaussians_per_voxel {
        let mu = center_from_raw(&cell.center, &ctx.eval(Head::Offset, &heads.offset, k)?, gamma);
        let opacity_logit = ctx.eval(Head::Opacity, &heads.opacity, k)?[0];
        let log_scale = log_scale_from_raw(&ctx.eval(Head::Scale, &heads.scale, k)?, ctx.radius, cfg);
        let q = match rotation_from_raw(&ctx.eval(Head::Rotation, &heads.rotation, k)?) {
            Ok(q) => q,
            Err(_) => {
                log::warn!("zero quaternion at cell {:?} slot {k}; using identity", cell.index);
                [1.0, 0.0, 0.0, 0.0]
            }
        };
        let dc = dc_from_raw(&cell.color, &ctx.eval(Head::Dc, &heads.dc, k)?);
        let rest: Vec<[f64; 3]> = match &heads.rest {
            Some(h) => ctx.eval(Head::Rest, h, k)?.chunks(3).map(|c| [c[0], c[1], c[2]]).collect(),
            None => Vec::new(),
        };
        out.push(GaussianPrimitive::from_f64(mu, log_scale, q, opacity_logit, dc, &rest));
    }
    Ok(out)
}

/// Decodes every cell into K primitives, ordered by cell index then slot.
pub fn decode_grid(
    grid: &SparseSphericalGrid,
    cfg: &DecoderConfig,
    heads: &DecoderHeads,
) -> Result<GaussianSet, DecodeError> {
    cfg.validate()?;
    let mut set = GaussianSet::new(cfg.sh_degree, Provenance { frame_id: 0, kind: SetKind::Full });
    let Some(first) = grid.cells.values().next() else { return Ok(set) };
    heads.check(cfg, first.refined.len())?;
    let cells: Vec<&AnchorCell> = grid.cells.values().collect();
    let per_cell: Vec<Vec<GaussianPrimitive>> =
        cells.par_iter().map(|c| decode_cell(c, &grid.spec, cfg, heads)).collect::<Result<_, _>>()?;
    set.primitives = per_cell.into_iter().flatten().collect();
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use approx::assert_relative_eq;

    const D: usize = 6;

    fn cell_at(center: Vec3, rng: &mut SplitMix64) -> AnchorCell {
        AnchorCell {
            index: VoxelIndex::new(0, 0, 0),
            center,
            color: [0.2, 0.5, 0.9],
            feature: vec![0.0; D],
            refined: (0..D).map(|_| rng.uniform(-1.0, 1.0)).collect(),
            count: 3,
        }
    }

    fn zero_heads(cfg: &DecoderConfig) -> DecoderHeads {
        let mk = |h: Head| {
            let out = h.output_dim(cfg.sh_degree);
            (out > 0).then(|| TinyMlp::zeros(&[cfg.head_input_dim(h, D), out]))
        };
        DecoderHeads {
            offset: mk(Head::Offset).unwrap(),
            opacity: mk(Head::Opacity).unwrap(),
            scale: mk(Head::Scale).unwrap(),
            rotation: {
                let mut m = mk(Head::Rotation).unwrap();
                m.set_output_bias(&[2.0, 0.0, 0.0, 0.0]);
                m
            },
            dc: mk(Head::Dc).unwrap(),
            rest: mk(Head::Rest),
        }
    }

    #[test]
    fn center_examples() {
        let x = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(center_from_raw(&x, &[0.0; 3], 0.3), x);
        let far = center_from_raw(&x, &[1e3; 3], 0.3);
        assert_relative_eq!(far, x + Vec3::repeat(0.3), epsilon = 1e-12);
        let mut rng = SplitMix64::new(1);
        for _ in 0..1000 {
            let raw = [rng.uniform(-50.0, 50.0), rng.normal() * 5.0, rng.uniform(-1.0, 1.0)];
            let mu = center_from_raw(&x, &raw, 0.3);
            assert!((mu - x).amax() <= 0.3 + 1e-12, "{raw:?}");
        }
    }

    #[test]
    fn opacity_examples() {
        assert_eq!(opacity_from_raw(0.0), 0.5);
        assert_relative_eq!(opacity_from_raw(10.0), 1.0 / (1.0 + (-10.0f64).exp()), epsilon = 1e-15);
        assert_relative_eq!(opacity_from_raw(10.0), 0.99995, epsilon = 1e-5);
        for raw in [-30.0, -1.0, 0.3, 30.0] {
            let a = opacity_from_raw(raw);
            assert!(a > 0.0 && a < 1.0);
        }
    }

    #[test]
    fn shape_examples() {
        let cfg = DecoderConfig::default();
        let ls = log_scale_from_raw(&[0.0; 3], 0.5, &cfg);
        for l in ls {
            assert_relative_eq!(l.exp(), (0.5 * (cfg.log_scale_min + cfg.log_scale_max)).exp(), epsilon = 1e-15);
        }
        let near = log_scale_from_raw(&[0.4, -0.2, 1.0], 1.0, &cfg);
        let far = log_scale_from_raw(&[0.4, -0.2, 1.0], 10.0, &cfg);
        for i in 0..3 {
            assert_relative_eq!(far[i].exp() / near[i].exp(), 10.0, epsilon = 1e-12);
        }
        assert_eq!(rotation_from_raw(&[2.0, 0.0, 0.0, 0.0]).unwrap(), [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(rotation_from_raw(&[0.0; 4]), Err(DecodeError::ZeroQuaternion));
    }

    #[test]
    fn appearance_examples() {
        assert_eq!(dc_from_raw(&[0.5; 3], &[0.0; 3]), [0.0; 3]);
        let white = dc_from_raw(&[1.0; 3], &[0.0; 3]);
        for v in white {
            assert_relative_eq!(v, 1.7725, epsilon = 1e-4);
        }
        let cfg = DecoderConfig::default();
        let heads = zero_heads(&cfg);
        let mut rng = SplitMix64::new(2);
        let app = decode_appearance(&cell_at(Vec3::x(), &mut rng), &heads.dc, heads.rest.as_ref(), &cfg).unwrap();
        assert_eq!(app.len(), 2);
        assert_eq!(app[0].1, vec![[0.0; 3]; 3]);
    }

    #[test]
    fn scale_grows_with_radius() {
        let cfg = DecoderConfig::default();
        let mut rng = SplitMix64::new(3);
        let heads = DecoderHeads::seeded(&cfg, D, 8, &mut rng);
        let mut cell = cell_at(Vec3::x(), &mut rng);
        let mut last = 0.0;
        for r in [0.3, 0.9, 1.5, 4.0, 12.0, 40.0] {
            cell.center = Vec3::new(r, 0.0, 0.0);
            // Equal raw outputs: the radius cue is off here.
            let cfg_nocue = DecoderConfig { radius_cue: RadiusCue { scale: false, ..Default::default() }, ..cfg };
            let mut h = heads.clone();
            h.scale = TinyMlp::seeded(&[cfg_nocue.head_input_dim(Head::Scale, D), 4, 3], &mut SplitMix64::new(4));
            let s = decode_shape(&cell, &h.scale, &h.rotation, &cfg_nocue).unwrap()[0].0;
            assert!(s[0] >= last);
            last = s[0];
        }
    }

    #[test]
    fn grid_counts_and_determinism() {
        let cfg = DecoderConfig::default();
        let mut rng = SplitMix64::new(5);
        let heads = DecoderHeads::seeded(&cfg, D, 16, &mut rng);
        let mut grid = SparseSphericalGrid::new(GridSpec::default());
        assert!(decode_grid(&grid, &cfg, &heads).unwrap().is_empty());
        for i in 0..5u32 {
            let mut c = cell_at(Vec3::new(2.0 + i as f64, 0.1 * i as f64, 0.0), &mut rng);
            c.index = VoxelIndex::new(i, i, i);
            grid.cells.insert(c.index, c);
        }
        let a = decode_grid(&grid, &cfg, &heads).unwrap();
        assert_eq!(a.len(), 10);
        let b = decode_grid(&grid, &cfg, &heads).unwrap();
        assert_eq!(a, b);
        for (j, p) in a.primitives.iter().enumerate() {
            let cell = grid.cells.values().nth(j / 2).unwrap();
            let gamma = cfg.gamma_at(&grid.spec, cell.radius());
            assert!((p.position() - cell.center).amax() <= gamma * (1.0 + 1e-6));
            let q = p.quaternion();
            assert!((q.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-6);
            let k = cfg.kappa(cell.radius());
            for s in p.scale() {
                assert!(s >= cfg.log_scale_min.exp() * k * (1.0 - 1e-6));
                assert!(s <= cfg.log_scale_max.exp() * k * (1.0 + 1e-6));
            }
            assert!(p.opacity() > 0.0 && p.opacity() < 1.0);
        }
    }

    #[test]
    fn zero_quaternion_falls_back() {
        let cfg = DecoderConfig::default();
        let mut heads = zero_heads(&cfg);
        heads.rotation = TinyMlp::zeros(&[cfg.head_input_dim(Head::Rotation, D), 4]);
        let mut rng = SplitMix64::new(6);
        let mut grid = SparseSphericalGrid::new(GridSpec::default());
        let c = cell_at(Vec3::new(3.0, 0.0, 0.0), &mut rng);
        grid.cells.insert(c.index, c);
        let set = decode_grid(&grid, &cfg, &heads).unwrap();
        assert_eq!(set.primitives[0].rotation, [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn missing_features_reported() {
        let cfg = DecoderConfig::default();
        let heads = zero_heads(&cfg);
        let mut rng = SplitMix64::new(7);
        let mut c = cell_at(Vec3::x(), &mut rng);
        c.refined.clear();
        assert!(matches!(decode_opacity(&c, &heads.opacity, &cfg), Err(DecodeError::MissingFeatures(_))));
    }

    #[test]
    fn head_io_round_trip() {
        let cfg = DecoderConfig::default();
        let heads = DecoderHeads::seeded(&cfg, D, 8, &mut SplitMix64::new(8));
        heads.check(&cfg, D).unwrap();
        let mut buf = Vec::new();
        heads.write_to(&mut buf).unwrap();
        assert_eq!(DecoderHeads::read_from(&mut buf.as_slice(), 1 << 20).unwrap(), heads);
        assert!(heads.check(&cfg, D + 1).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(DecoderConfig::default().validate().is_ok());
        let bad = DecoderConfig { gaussians_per_voxel: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = DecoderConfig { log_scale_min: 0.0, log_scale_max: -1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = DecoderConfig { gamma: Some(0.0), ..Default::default() };
        assert!(bad.validate().is_err());
    }
}

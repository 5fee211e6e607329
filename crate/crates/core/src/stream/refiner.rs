use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::StreamError;
use crate::decoder::{GaussianPrimitive, GaussianSet};
use crate::geometry::{quat_mul, quat_normalize, Quat, Vec3};
use crate::mlp::{MlpGradient, MlpScratch, TinyMlp};
use crate::rng::SplitMix64;

/// Width of the refiner output: Δμ, Δlog-scale, Δq, Δopacity logit, Δsh_dc.
pub const DELTA_DIM: usize = 14;
/// Width of the compared parameter vector (same layout as the delta).
const PARAM_DIM: usize = 14;
const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefinerConfig {
    /// Sinusoidal frequencies per position axis.
    pub frequencies: usize,
    /// Positions are divided by this length (meters) before encoding.
    pub position_scale: f64,
    pub hidden: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub max_backtracks: usize,
    /// Correspondences beyond this count are subsampled with a fixed stride.
    pub max_correspondences: usize,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        Self {
            frequencies: 4,
            position_scale: 50.0,
            hidden: 32,
            steps: 30,
            learning_rate: 0.05,
            max_backtracks: 12,
            max_correspondences: 4096,
        }
    }
}

impl RefinerConfig {
    pub fn input_dim(&self) -> usize {
        3 + 6 * self.frequencies + 3
    }

    /// Seeded hidden layers and an all-zero output layer, so the refiner
    /// starts as the identity.
    pub fn identity_refiner(&self, rng: &mut SplitMix64) -> TinyMlp {
        let mut mlp = TinyMlp::seeded(&[self.input_dim(), self.hidden, self.hidden, DELTA_DIM], rng);
        mlp.scale_output_weights(0.0);
        mlp.set_output_bias(&[0.0; DELTA_DIM]);
        mlp
    }
}

/// Refiner input: scaled position, its sin/cos encoding at octave
/// frequencies, then the DC color.
pub fn encode_input(p: &GaussianPrimitive, cfg: &RefinerConfig, out: &mut Vec<f64>) {
    out.clear();
    let x = p.position() / cfg.position_scale;
    out.extend_from_slice(&[x.x, x.y, x.z]);
    for k in 0..cfg.frequencies {
        let f = std::f64::consts::PI * (1u64 << k) as f64;
        for i in 0..3 {
            let (s, c) = (f * x[i]).sin_cos();
            out.push(s);
            out.push(c);
        }
    }
    out.extend_from_slice(&p.base_color());
}

/// Per-primitive parameter correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualDelta {
    pub position: Vec3,
    pub log_scale: [f64; 3],
    /// Unnormalized; composed as `normalize((1,0,0,0) + raw)`.
    pub rotation: Quat,
    pub opacity_logit: f64,
    pub sh_dc: [f64; 3],
}

impl ResidualDelta {
    pub fn from_raw(raw: &[f64]) -> Self {
        Self {
            position: Vec3::new(raw[0], raw[1], raw[2]),
            log_scale: [raw[3], raw[4], raw[5]],
            rotation: [raw[6], raw[7], raw[8], raw[9]],
            opacity_logit: raw[10],
            sh_dc: [raw[11], raw[12], raw[13]],
        }
    }

    /// Composition ⊕: additive except for rotation, which is `Δq ⊗ q`
    /// renormalized. An exactly zero rotation delta leaves `q` untouched.
    pub fn apply(&self, p: &GaussianPrimitive) -> GaussianPrimitive {
        let mut out = *p;
        for i in 0..3 {
            out.mean[i] = (p.mean[i] as f64 + self.position[i]) as f32;
            out.log_scale[i] = (p.log_scale[i] as f64 + self.log_scale[i]) as f32;
            out.sh_dc[i] = (p.sh_dc[i] as f64 + self.sh_dc[i]) as f32;
        }
        out.opacity_logit = (p.opacity_logit as f64 + self.opacity_logit) as f32;
        if self.rotation != [0.0; 4] {
            let q = compose_rotation(self.rotation, p.rotation.map(f64::from)).0;
            out.rotation = q.map(|v| v as f32);
        }
        out
    }
}

/// `normalize((1 + r₀, r₁, r₂, r₃) ⊗ q)` together with the unnormalized
/// product.
fn compose_rotation(raw: Quat, q: Quat) -> (Quat, Quat) {
    let dq = [1.0 + raw[0], raw[1], raw[2], raw[3]];
    let m = quat_mul(dq, q);
    (quat_normalize(m).unwrap_or(q), m)
}

/// Refined copy of `shared`; the input set is not modified.
pub fn apply_refiner(shared: &GaussianSet, refiner: &TinyMlp, cfg: &RefinerConfig) -> Result<GaussianSet, StreamError> {
    if refiner.input_dim() != cfg.input_dim() || refiner.output_dim() != DELTA_DIM {
        return Err(StreamError::DimensionMismatch { expected: cfg.input_dim(), got: refiner.input_dim() });
    }
    let mut out = shared.clone();
    if refiner.is_zero_output() {
        return Ok(out);
    }
    out.primitives = shared
        .primitives
        .par_chunks(CHUNK)
        .flat_map_iter(|chunk| {
            let mut input = Vec::new();
            let mut scratch = MlpScratch::default();
            chunk
                .iter()
                .map(|p| {
                    encode_input(p, cfg, &mut input);
                    let raw = refiner.forward_with(&input, &mut scratch).expect("checked dimensions");
                    ResidualDelta::from_raw(raw).apply(p)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(out)
}

fn param_vector(p: &GaussianPrimitive) -> [f64; PARAM_DIM] {
    let mut v = [0.0; PARAM_DIM];
    for i in 0..3 {
        v[i] = p.mean[i] as f64;
        v[3 + i] = p.log_scale[i] as f64;
        v[11 + i] = p.sh_dc[i] as f64;
    }
    for i in 0..4 {
        v[6 + i] = p.rotation[i] as f64;
    }
    v[10] = p.opacity_logit as f64;
    v
}

/// One training pair: a shared primitive and the value it should move to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub source: GaussianPrimitive,
    pub target: GaussianPrimitive,
}

/// Squared parameter error of `source ⊕ Δ(raw)` against `target`, and its
/// gradient with respect to `raw`. Quaternion sign ambiguity is resolved
/// toward the composed rotation.
fn pair_loss(c: &Correspondence, raw: &[f64], grad: Option<&mut [f64; DELTA_DIM]>) -> f64 {
    let src = param_vector(&c.source);
    let tgt = param_vector(&c.target);
    let mut out = [0.0; PARAM_DIM];
    for i in [0, 1, 2, 3, 4, 5, 10, 11, 12, 13] {
        out[i] = src[i] + raw[i];
    }
    let q = [src[6], src[7], src[8], src[9]];
    let (mut qn, m) = compose_rotation([raw[6], raw[7], raw[8], raw[9]], q);
    if raw[6..10] == [0.0; 4] {
        // Matches `ResidualDelta::apply`, which keeps q as stored.
        qn = q;
    }
    out[6..10].copy_from_slice(&qn);
    let sign = if (0..4).map(|i| qn[i] * tgt[6 + i]).sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
    let mut t = tgt;
    for i in 6..10 {
        t[i] *= sign;
    }
    let loss: f64 = (0..PARAM_DIM).map(|i| (out[i] - t[i]).powi(2)).sum();
    if let Some(g) = grad {
        for i in [0, 1, 2, 3, 4, 5, 10, 11, 12, 13] {
            g[i] = 2.0 * (out[i] - t[i]);
        }
        // d/dm of ‖m/|m| − t‖², then through m = Δq ⊗ q (linear in Δq).
        let norm = (m[0] * m[0] + m[1] * m[1] + m[2] * m[2] + m[3] * m[3]).sqrt();
        let dl_dq: [f64; 4] = [0, 1, 2, 3].map(|i| 2.0 * (qn[i] - t[6 + i]));
        let proj: f64 = (0..4).map(|i| qn[i] * dl_dq[i]).sum();
        let dl_dm: [f64; 4] = [0, 1, 2, 3].map(|i| (dl_dq[i] - qn[i] * proj) / norm);
        let [b0, b1, b2, b3] = q;
        let jac = [[b0, -b1, -b2, -b3], [b1, b0, b3, -b2], [b2, -b3, b0, b1], [b3, b2, -b1, b0]];
        for j in 0..4 {
            g[6 + j] = (0..4).map(|i| jac[i][j] * dl_dm[i]).sum();
        }
    }
    loss
}

fn loss_only(refiner: &TinyMlp, inputs: &[Vec<f64>], pairs: &[Correspondence]) -> f64 {
    let partial: Vec<f64> = inputs
        .par_chunks(CHUNK)
        .zip(pairs.par_chunks(CHUNK))
        .map(|(xs, cs)| {
            let mut scratch = MlpScratch::default();
            xs.iter()
                .zip(cs)
                .map(|(x, c)| pair_loss(c, refiner.forward_with(x, &mut scratch).expect("checked"), None))
                .sum::<f64>()
        })
        .collect();
    partial.iter().sum::<f64>() / pairs.len() as f64
}

fn loss_and_grad(refiner: &TinyMlp, inputs: &[Vec<f64>], pairs: &[Correspondence]) -> (f64, Vec<f64>) {
    let partial: Vec<(f64, MlpGradient)> = inputs
        .par_chunks(CHUNK)
        .zip(pairs.par_chunks(CHUNK))
        .map(|(xs, cs)| {
            let mut scratch = MlpScratch::default();
            let mut grad = refiner.zero_gradient();
            let mut loss = 0.0;
            for (x, c) in xs.iter().zip(cs) {
                let raw = refiner.forward_with(x, &mut scratch).expect("checked").to_vec();
                let mut g = [0.0; DELTA_DIM];
                loss += pair_loss(c, &raw, Some(&mut g));
                refiner.backward_accumulate(x, &g, &mut grad, &mut scratch).expect("checked");
            }
            (loss, grad)
        })
        .collect();
    let mut total = 0.0;
    let mut grad = refiner.zero_gradient();
    for (l, g) in &partial {
        total += l;
        grad.add(g);
    }
    let n = pairs.len() as f64;
    grad.scale(1.0 / n);
    (total / n, grad.flatten())
}

/// Mean parameter-space loss of `refiner` over `pairs`, with its gradient.
pub fn refiner_loss(
    refiner: &TinyMlp,
    pairs: &[Correspondence],
    cfg: &RefinerConfig,
) -> Result<(f64, Vec<f64>), StreamError> {
    if pairs.is_empty() {
        return Err(StreamError::NoCorrespondences);
    }
    let inputs = encode_all(pairs, cfg);
    Ok(loss_and_grad(refiner, &inputs, pairs))
}

fn encode_all(pairs: &[Correspondence], cfg: &RefinerConfig) -> Vec<Vec<f64>> {
    pairs
        .par_iter()
        .map(|c| {
            let mut v = Vec::with_capacity(cfg.input_dim());
            encode_input(&c.source, cfg, &mut v);
            v
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub refiner: TinyMlp,
    /// Loss before the first step and after every accepted step.
    pub losses: Vec<f64>,
}

/// Gradient descent with backtracking from `init`. Parameters are rounded
/// to f32 before each evaluation so the stored refiner reproduces the
/// recorded losses exactly.
pub fn fit_refiner(
    init: &TinyMlp,
    pairs: &[Correspondence],
    cfg: &RefinerConfig,
) -> Result<FitOutcome, StreamError> {
    if pairs.is_empty() {
        return Err(StreamError::NoCorrespondences);
    }
    if init.input_dim() != cfg.input_dim() || init.output_dim() != DELTA_DIM {
        return Err(StreamError::DimensionMismatch { expected: cfg.input_dim(), got: init.input_dim() });
    }
    let pairs: Vec<Correspondence> = if pairs.len() > cfg.max_correspondences {
        let stride = pairs.len().div_ceil(cfg.max_correspondences);
        pairs.iter().step_by(stride).copied().collect()
    } else {
        pairs.to_vec()
    };
    let inputs = encode_all(&pairs, cfg);
    let mut refiner = init.clone();
    refiner.quantize_f32();
    let (mut loss, mut grad) = loss_and_grad(&refiner, &inputs, &pairs);
    let mut losses = vec![loss];
    let mut lr = cfg.learning_rate;
    for _ in 0..cfg.steps {
        if loss == 0.0 || grad.iter().all(|&g| g == 0.0) {
            break;
        }
        let params = refiner.params();
        let mut accepted = None;
        for _ in 0..=cfg.max_backtracks {
            let trial_params: Vec<f64> = params.iter().zip(&grad).map(|(p, g)| p - lr * g).collect();
            let mut trial = refiner.clone();
            trial.set_params(&trial_params).expect("same layout");
            trial.quantize_f32();
            let trial_loss = loss_only(&trial, &inputs, &pairs);
            if trial_loss <= loss {
                accepted = Some((trial, trial_loss));
                break;
            }
            lr *= 0.5;
        }
        let Some((trial, trial_loss)) = accepted else { break };
        refiner = trial;
        loss = trial_loss;
        losses.push(loss);
        lr *= 1.5;
        grad = loss_and_grad(&refiner, &inputs, &pairs).1;
    }
    Ok(FitOutcome { refiner, losses })
}

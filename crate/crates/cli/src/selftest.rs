//! Quick invariant checks run by `sphsplat selftest`.

use sphsplat_core::decoder::{GaussianPrimitive, GaussianSet, Provenance, SetKind};
use sphsplat_core::geometry::{from_spherical, to_spherical, Vec3, DEFAULT_EPSILON};
use sphsplat_core::grid::inv_dist_weights;
use sphsplat_core::metrics::chamfer_metrics;
use sphsplat_core::mlp::TinyMlp;
use sphsplat_core::pipeline::{Model, ModelConfig};
use sphsplat_core::rng::SplitMix64;
use sphsplat_core::scenegen::{generate_sequence, LayoutParams, RigSpec, SynthOptions, SyntheticScene};
use sphsplat_core::stream::{deserialize_state, serialize_state, StreamConfig, Streamer};

use crate::ply::{decode_gaussians_ply, encode_gaussians_ply};
use crate::ppm::{decode_ppm, encode_ppm};

type Check = fn(&mut SplitMix64) -> Result<(), String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn spherical_round_trip(rng: &mut SplitMix64) -> Result<(), String> {
    for _ in 0..10_000 {
        let p = Vec3::new(rng.uniform(-50.0, 50.0), rng.uniform(-50.0, 50.0), rng.uniform(-50.0, 50.0));
        let back = from_spherical(&to_spherical(&p, 0.0));
        ensure((back - p).norm() <= 1e-9 * p.norm().max(1.0), || format!("{p:?} -> {back:?}"))?;
        let s = to_spherical(&p, DEFAULT_EPSILON);
        ensure(s.phi.abs() <= std::f64::consts::FRAC_PI_2, || format!("elevation {} out of range", s.phi))?;
    }
    Ok(())
}

fn weights_sum_to_one(rng: &mut SplitMix64) -> Result<(), String> {
    for _ in 0..1000 {
        let n = 1 + rng.below(20) as usize;
        let pts: Vec<Vec3> = (0..n).map(|_| Vec3::new(rng.normal(), rng.normal(), rng.normal())).collect();
        let center = pts.iter().sum::<Vec3>() / n as f64;
        let sum: f64 = inv_dist_weights(&pts, &center, 1e-6).iter().sum();
        ensure((sum - 1.0).abs() <= 1e-12, || format!("weights sum to {sum}"))?;
    }
    Ok(())
}

fn mlp_gradients(rng: &mut SplitMix64) -> Result<(), String> {
    for _ in 0..10 {
        let sizes = [1 + rng.below(6) as usize, 1 + rng.below(8) as usize, 1 + rng.below(4) as usize];
        let mlp = TinyMlp::seeded(&sizes, rng);
        let x: Vec<f64> = (0..sizes[0]).map(|_| rng.normal()).collect();
        let up: Vec<f64> = (0..sizes[2]).map(|_| rng.normal()).collect();
        let loss = |m: &TinyMlp| m.forward(&x).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum::<f64>();
        let grad = mlp.backward(&x, &up).map_err(|e| e.to_string())?.0.flatten();
        let params = mlp.params();
        for k in 0..params.len() {
            let eval = |d: f64| {
                let mut p = params.clone();
                p[k] += d;
                let mut m = mlp.clone();
                m.set_params(&p).unwrap();
                loss(&m)
            };
            let fd = (eval(1e-6) - eval(-1e-6)) / 2e-6;
            let scale = fd.abs().max(grad[k].abs()).max(1e-3);
            ensure((fd - grad[k]).abs() / scale < 1e-4, || format!("parameter {k}: {fd} vs {}", grad[k]))?;
        }
    }
    Ok(())
}

fn random_set(rng: &mut SplitMix64, n: usize) -> GaussianSet {
    let mut set = GaussianSet::new(1, Provenance { frame_id: 0, kind: SetKind::Full });
    for _ in 0..n {
        let mut p = GaussianPrimitive::default();
        for v in p.mean.iter_mut().chain(&mut p.log_scale).chain(&mut p.rotation).chain(&mut p.sh_dc) {
            *v = rng.normal() as f32;
        }
        for v in p.sh_rest[..3].iter_mut().flatten() {
            *v = rng.normal() as f32;
        }
        set.primitives.push(p);
    }
    set
}

fn file_round_trips(rng: &mut SplitMix64) -> Result<(), String> {
    let set = random_set(rng, 50);
    let back = decode_gaussians_ply(&encode_gaussians_ply(&set)).map_err(|e| e.to_string())?;
    ensure(back == set, || "PLY round trip differs".into())?;
    let px: Vec<u8> = (0..4 * 3 * 3).map(|_| rng.below(256) as u8).collect();
    let img = decode_ppm(&encode_ppm(4, 3, &px), std::path::Path::new("selftest.ppm")).map_err(|e| e.to_string())?;
    ensure(img == (4, 3, px), || "PPM round trip differs".into())
}

fn stream_round_trip(rng: &mut SplitMix64) -> Result<(), String> {
    let seed = rng.next_u64();
    let scene = SyntheticScene::open_air(seed, &LayoutParams { with_mover: true, ..Default::default() });
    let rig = RigSpec { width: 64, height: 48, ..Default::default() };
    let (frames, _) = generate_sequence(&scene, &rig, SynthOptions::default(), 3, seed).map_err(|e| e.to_string())?;
    let mut s = Streamer::new(Model::seeded(ModelConfig::default(), 8, seed), StreamConfig::default());
    let mut first = None;
    for f in &frames {
        s.ingest(f).map_err(|e| e.to_string())?;
        first.get_or_insert(s.model.decode_frame(f).map_err(|e| e.to_string())?.set);
    }
    let bytes = serialize_state(&s.state).map_err(|e| e.to_string())?;
    let back = deserialize_state(&bytes).map_err(|e| e.to_string())?;
    ensure(back == s.state, || "RPGS round trip differs".into())?;
    let again = Model::seeded(ModelConfig::default(), 8, seed).decode_frame(&frames[0]).map_err(|e| e.to_string())?;
    ensure(Some(again.set) == first, || "decode is not deterministic".into())
}

fn chamfer_oracle(rng: &mut SplitMix64) -> Result<(), String> {
    let nearest = |p: &Vec3, cloud: &[Vec3]| cloud.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min);
    for _ in 0..20 {
        let a: Vec<Vec3> = (0..20).map(|_| Vec3::new(rng.normal(), rng.normal(), rng.normal())).collect();
        let b: Vec<Vec3> = (0..20).map(|_| Vec3::new(rng.normal(), rng.normal(), rng.normal())).collect();
        let r = chamfer_metrics(&a, &b, false).map_err(|e| e.to_string())?;
        let acc = a.iter().map(|p| nearest(p, &b)).sum::<f64>() / 20.0;
        let comp = b.iter().map(|p| nearest(p, &a)).sum::<f64>() / 20.0;
        ensure((r.accuracy - acc).abs() <= 1e-12 && (r.completeness - comp).abs() <= 1e-12, || {
            format!("chamfer ({}, {}) vs brute force ({acc}, {comp})", r.accuracy, r.completeness)
        })?;
    }
    Ok(())
}

const CHECKS: &[(&str, Check)] = &[
    ("spherical_round_trip", spherical_round_trip),
    ("weights_sum_to_one", weights_sum_to_one),
    ("mlp_gradients", mlp_gradients),
    ("file_round_trips", file_round_trips),
    ("stream_round_trip", stream_round_trip),
    ("chamfer_oracle", chamfer_oracle),
];

/// Runs every check, printing one line each. True if all pass.
pub fn run_all(seed: u64) -> bool {
    let mut all = true;
    for (i, (name, check)) in CHECKS.iter().enumerate() {
        let mut rng = SplitMix64::derive(seed, i as u64);
        match check(&mut rng) {
            Ok(()) => println!("selftest {name}: pass"),
            Err(msg) => {
                println!("selftest {name}: FAIL ({msg})");
                all = false;
            }
        }
    }
    all
}

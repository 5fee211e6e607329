use sphsplat_core::decoder::SetKind;
use sphsplat_core::pipeline::{Model, ModelConfig};
use sphsplat_core::scenegen::{LayoutParams, RigSpec, SequenceGenerator, SynthOptions, SyntheticScene};
use sphsplat_core::stream::{
    deserialize_state, detect_holes, fuse_dynamic_masks, naive_concatenation_len, serialize_state, split_dynamic,
    StreamConfig, Streamer,
};

fn half_rig() -> RigSpec {
    RigSpec { width: 259, height: 203, ..Default::default() }
}

fn model() -> Model {
    Model::seeded(ModelConfig::default(), 8, 11)
}

#[test]
fn moving_box_primitives_are_dynamic() {
    let scene = SyntheticScene::open_air(4, &LayoutParams { with_mover: true, ..Default::default() });
    let rig = half_rig();
    let generator = SequenceGenerator::new(&scene, &rig, SynthOptions::default(), 4).unwrap();
    let first_mover_face = scene.static_face_count();
    let cfg = StreamConfig::default();
    let m = model();
    for f in [0, 7, 15] {
        let (frame, labels) = generator.frame(f);
        let samples = m.samples(&frame).unwrap();
        let decoded = m.decode_samples(&samples, f).unwrap();
        let fused = fuse_dynamic_masks(std::slice::from_ref(&frame), cfg.range_width, cfg.range_height);
        let (stat, dynamic) = split_dynamic(&decoded.set, &fused, cfg.dilation);
        assert_eq!(stat.len() + dynamic.len(), decoded.set.len());
        let k = m.config.decoder.gaussians_per_voxel;
        let mut box_prims = 0;
        for (c, members) in decoded.anchors.members.iter().enumerate() {
            let on_box = members.iter().all(|&i| {
                let o = samples.origins[i as usize];
                labels.face_ids[o.view as usize][(o.row * frame.width + o.col) as usize] >= first_mover_face
            });
            if on_box {
                for p in &decoded.set.primitives[c * k..(c + 1) * k] {
                    assert!(dynamic.primitives.contains(p), "frame {f}: box primitive left in the static part");
                    box_prims += 1;
                }
            }
        }
        assert!(box_prims > 0, "frame {f}: mover not observed");
        // The static part keeps the bulk of the scene.
        assert!(stat.len() as f64 > 0.9 * decoded.set.len() as f64);
    }
}

#[test]
fn self_coverage_leaves_few_holes() {
    for seed in [1, 2] {
        let scene = SyntheticScene::open_air(seed, &LayoutParams::default());
        let rig = half_rig();
        let generator = SequenceGenerator::new(&scene, &rig, SynthOptions::default(), seed).unwrap();
        let (frame, _) = generator.frame(0);
        let mut s = Streamer::new(model(), StreamConfig::default());
        s.ingest(&frame).unwrap();
        let holes = detect_holes(&s.state, &frame, 0.5, 0.5, &s.config.render);
        let hole_count = holes.iter().flatten().filter(|&&h| h).count();
        let confident: usize = frame.views.iter().map(|v| v.confidence.iter().filter(|&&c| c >= 0.5).count()).sum();
        let ratio = hole_count as f64 / confident as f64;
        assert!(ratio < 0.05, "seed {seed}: hole ratio {ratio}");
        // Low-confidence pixels are never holes.
        for (v, h) in frame.views.iter().zip(&holes) {
            assert!(h.iter().zip(&v.confidence).all(|(&hole, &c)| !hole || c >= 0.5));
        }
    }
}

#[test]
fn static_scene_shared_set_stays_flat() {
    let scene = SyntheticScene::open_air(6, &LayoutParams::default());
    let rig = half_rig();
    let generator = SequenceGenerator::new(&scene, &rig, SynthOptions::default(), 6).unwrap();
    let mut s = Streamer::new(model(), StreamConfig::default());
    let mut prev = 0;
    for f in 0..=10 {
        let report = s.ingest(&generator.frame(f).0).unwrap();
        if f > 0 {
            assert!(report.shared_after as f64 <= 1.02 * prev as f64, "frame {f}: {prev} -> {}", report.shared_after);
            assert_eq!(report.dynamic, 0);
        }
        prev = report.shared_after;
    }
    for (&id, refiner) in &s.state.refiners {
        let r = s.state.reconstruct(id, &s.config.refiner).unwrap();
        assert_eq!(r.shared.provenance.kind, SetKind::Shared);
        // Identical static frames give an exact fit: the refiner stays the identity.
        assert!(refiner.is_zero_output());
        assert_eq!(r.shared, s.state.shared);
    }
}

#[test]
fn moving_scene_stream_round_trips_and_compacts() {
    let scene = SyntheticScene::open_air(8, &LayoutParams { with_mover: true, ..Default::default() });
    let rig = half_rig();
    let generator = SequenceGenerator::new(&scene, &rig, SynthOptions::default(), 8).unwrap();
    let mut s = Streamer::new(model(), StreamConfig::default());
    let mut counts = Vec::new();
    for f in 0..8 {
        let report = s.ingest(&generator.frame(f).0).unwrap();
        counts.push(report.decoded);
        if let Some((before, after)) = report.refiner_loss {
            assert!(after <= before);
        }
    }
    let bytes = serialize_state(&s.state).unwrap();
    assert_eq!(deserialize_state(&bytes).unwrap(), s.state);
    let naive = naive_concatenation_len(&counts, s.state.shared.sh_degree);
    assert!(bytes.len() * 4 < naive, "{} bytes vs naive {naive}", bytes.len());
    assert!(s.state.dynamic.values().any(|d| !d.is_empty()));
}

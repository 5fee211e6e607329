use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{Unit, UnitQuaternion};
use proptest::prelude::*;

use sphsplat_core::decoder::{GaussianPrimitive, GaussianSet, Provenance, SetKind};
use sphsplat_core::geometry::{
    from_spherical, to_spherical, umeyama_align, voxel_index, GridSpec, Sim3Transform, SphericalCoord, Vec3,
    VoxelIndex,
};
use sphsplat_core::metrics::chamfer_metrics;
use sphsplat_core::rng::SplitMix64;
use sphsplat_core::stream::{deserialize_state, serialize_state, RefinerConfig, SceneState};

fn point() -> impl Strategy<Value = Vec3> {
    (-40.0..40.0f64, -40.0..40.0f64, -40.0..40.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn cloud(n: usize) -> impl Strategy<Value = Vec<Vec3>> {
    prop::collection::vec(point(), 1..n)
}

/// Bin of `x` on a half-open partition starting at `lo`, by scanning.
fn scan(x: f64, lo: f64, width: f64, bins: u32) -> u32 {
    (0..bins).find(|&i| x < lo + (i + 1) as f64 * width).unwrap_or(bins - 1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn spherical_round_trip(p in point()) {
        let s = to_spherical(&p, 0.0);
        prop_assert!((-PI..PI).contains(&s.theta));
        prop_assert!(s.phi.abs() <= FRAC_PI_2);
        prop_assert!((from_spherical(&s) - p).norm() <= 1e-9 * p.norm().max(1.0));
    }

    #[test]
    fn voxel_index_matches_bin_scan(r in 0.2..60.0f64, theta in -PI..PI, phi in -FRAC_PI_2..FRAC_PI_2) {
        let g = GridSpec::default();
        let s = SphericalCoord { r, theta, phi };
        // Skip points within rounding distance of a bin edge.
        let near_edge = |x: f64, lo: f64, w: f64| {
            let t = (x - lo) / w;
            (t - t.round()).abs() < 1e-9
        };
        prop_assume!(!near_edge(r, g.r_min, g.delta_r));
        prop_assume!(!near_edge(theta, g.theta_0, TAU / g.n_theta as f64));
        prop_assume!(!near_edge(phi, g.phi_0, g.delta_phi));
        let expected = VoxelIndex::new(
            scan(r, g.r_min, g.delta_r, g.n_r()),
            scan(theta, g.theta_0, TAU / g.n_theta as f64, g.n_theta),
            scan(phi, g.phi_0, g.delta_phi, g.n_phi()),
        );
        prop_assert_eq!(voxel_index(&s, &g), Ok(expected));
    }

    #[test]
    fn chamfer_is_symmetric_and_zero_on_itself(a in cloud(40), b in cloud(40)) {
        let ab = chamfer_metrics(&a, &b, false).unwrap();
        let ba = chamfer_metrics(&b, &a, false).unwrap();
        prop_assert_eq!(ab.accuracy, ba.completeness);
        prop_assert_eq!(ab.completeness, ba.accuracy);
        prop_assert!(ab.overall >= 0.0);
        prop_assert_eq!(chamfer_metrics(&a, &a, false).unwrap().overall, 0.0);
    }

    #[test]
    fn umeyama_recovers_similarity(
        pts in prop::collection::vec(point(), 8..40),
        scale in 0.5..2.0f64,
        axis in point(),
        angle in -PI..PI,
        t in point(),
    ) {
        prop_assume!(axis.norm() > 1e-3);
        let truth = Sim3Transform::new(scale, UnitQuaternion::from_axis_angle(&Unit::new_normalize(axis), angle), t);
        let moved = truth.apply_all(&pts);
        let est = umeyama_align(&pts, &moved);
        prop_assume!(est.is_ok());
        let est = est.unwrap();
        for (p, q) in est.apply_all(&pts).iter().zip(&moved) {
            prop_assert!((p - q).norm() <= 1e-6 * q.norm().max(1.0));
        }
    }

    #[test]
    fn rpgs_round_trip(seed in any::<u64>(), shared in 0usize..40, frames in 0u32..4, deg in 0u8..3) {
        let mut rng = SplitMix64::new(seed);
        let mut prim = || {
            let mut p = GaussianPrimitive::default();
            for v in p.mean.iter_mut().chain(&mut p.log_scale).chain(&mut p.sh_dc) {
                *v = rng.normal() as f32;
            }
            p
        };
        let mut state = SceneState::new(deg, 2);
        state.shared.primitives = (0..shared).map(|_| prim()).collect();
        let cfg = RefinerConfig::default();
        for f in 0..frames {
            let mut dynamic = GaussianSet::new(deg, Provenance { frame_id: f, kind: SetKind::Dynamic });
            dynamic.primitives = (0..f as usize).map(|_| prim()).collect();
            state.dynamic.insert(f, dynamic);
            state.refiners.insert(f, cfg.identity_refiner(&mut SplitMix64::new(seed ^ f as u64)));
        }
        let bytes = serialize_state(&state).unwrap();
        prop_assert_eq!(bytes.len(), state.serialized_len());
        prop_assert_eq!(deserialize_state(&bytes).unwrap(), state);
        // Every strict prefix is rejected.
        let cut = (seed % bytes.len() as u64) as usize;
        prop_assert!(deserialize_state(&bytes[..cut]).is_err());
    }
}

use crate::decoder::{SH_C0, SH_C1, SH_C2};
use crate::geometry::Vec3;

/// Real SH color for unit direction `dir`, using the coefficients up to
/// `degree`, shifted by +0.5 and clamped to [0, 1].
pub fn evaluate_sh(sh_dc: &[f32; 3], sh_rest: &[[f32; 3]], degree: u8, dir: &Vec3) -> [f64; 3] {
    let mut out = [0.0; 3];
    let (x, y, z) = (dir.x, dir.y, dir.z);
    for c in 0..3 {
        let mut v = SH_C0 * sh_dc[c] as f64;
        if degree >= 1 {
            let r = |k: usize| sh_rest[k][c] as f64;
            v += SH_C1 * (-y * r(0) + z * r(1) - x * r(2));
            if degree >= 2 {
                v += SH_C2[0] * x * y * r(3)
                    + SH_C2[1] * y * z * r(4)
                    + SH_C2[2] * (2.0 * z * z - x * x - y * y) * r(5)
                    + SH_C2[3] * x * z * r(6)
                    + SH_C2[4] * (x * x - y * y) * r(7);
            }
        }
        out[c] = (v + 0.5).clamp(0.0, 1.0);
    }
    out
}

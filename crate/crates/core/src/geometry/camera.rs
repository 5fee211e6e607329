use super::{GeometryError, Mat3, Vec3};

/// Rectified pinhole camera. Extrinsics map robot-frame points into the
/// camera frame: `p_cam = R·p + t`, camera looking down +z with +x right
/// and +y down.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl CameraModel {
    pub fn new(
        intrinsics: [f64; 4],
        rotation: Mat3,
        translation: Vec3,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let [fx, fy, cx, cy] = intrinsics;
        let cam = Self { fx, fy, cx, cy, rotation, translation, width, height };
        cam.validate(1e-9)?;
        Ok(cam)
    }

    /// Checks `RᵀR = I`, `det R = +1` and positive focal lengths.
    pub fn validate(&self, tolerance: f64) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidCamera("focal lengths must be positive".into()));
        }
        let orth = (self.rotation.transpose() * self.rotation - Mat3::identity()).abs().max();
        if !(orth <= tolerance) {
            return Err(GeometryError::InvalidCamera(format!(
                "rotation is not orthonormal (max |RᵀR - I| = {orth:e})"
            )));
        }
        let det = self.rotation.determinant();
        if !((det - 1.0).abs() <= tolerance.max(1e-9) * 10.0) {
            return Err(GeometryError::InvalidCamera(format!("rotation determinant is {det}")));
        }
        if !(self.translation.iter().all(|v| v.is_finite())) {
            return Err(GeometryError::InvalidCamera("non-finite translation".into()));
        }
        Ok(())
    }

    /// Camera center in the robot frame, `-Rᵀt`.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// Explicit `K[R|t]` matrix.
    pub fn projection_matrix(&self) -> nalgebra::Matrix3x4<f64> {
        let k = Mat3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0);
        let mut rt = nalgebra::Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        rt.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        k * rt
    }

    /// Unit ray direction in the camera frame through image point (u, v).
    pub fn ray_direction(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0).normalize()
    }
}

pub fn robot_to_camera(cam: &CameraModel, p: &Vec3) -> Vec3 {
    cam.rotation * p + cam.translation
}

pub fn camera_to_robot(cam: &CameraModel, p_cam: &Vec3) -> Vec3 {
    cam.rotation.transpose() * (p_cam - cam.translation)
}

pub fn project(cam: &CameraModel, p_world: &Vec3) -> Result<Projection, GeometryError> {
    let pc = robot_to_camera(cam, p_world);
    if !(pc.z > 0.0) {
        return Err(GeometryError::BehindCamera(pc.z));
    }
    Ok(Projection {
        u: cam.fx * pc.x / pc.z + cam.cx,
        v: cam.fy * pc.y / pc.z + cam.cy,
        depth: pc.z,
    })
}

/// Inverse of [`project`] for a known view-space depth.
pub fn unproject(cam: &CameraModel, u: f64, v: f64, depth: f64) -> Vec3 {
    let pc = Vec3::new((u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth, depth);
    camera_to_robot(cam, &pc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{quat_from_axis_angle, quat_to_matrix};
    use crate::rng::SplitMix64;

    fn test_camera(rng: &mut SplitMix64) -> CameraModel {
        let axis = Vec3::new(rng.normal(), rng.normal(), rng.normal());
        let r = quat_to_matrix(quat_from_axis_angle(axis, rng.uniform(-3.0, 3.0)));
        let t = Vec3::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
        CameraModel::new([300.0, 280.0, 160.0, 120.0], r, t, 320, 240).unwrap()
    }

    #[test]
    fn optical_axis() {
        let cam =
            CameraModel::new([500.0, 500.0, 320.0, 240.0], Mat3::identity(), Vec3::zeros(), 640, 480)
                .unwrap();
        let p = project(&cam, &Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!((p.u, p.v, p.depth), (320.0, 240.0, 1.0));
    }

    #[test]
    fn behind_camera() {
        let cam =
            CameraModel::new([500.0, 500.0, 320.0, 240.0], Mat3::identity(), Vec3::zeros(), 640, 480)
                .unwrap();
        assert!(matches!(
            project(&cam, &Vec3::new(0.0, 0.0, -1.0)),
            Err(GeometryError::BehindCamera(_))
        ));
        assert!(project(&cam, &Vec3::new(1.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn matches_matrix_oracle() {
        let mut rng = SplitMix64::new(1);
        let cam = test_camera(&mut rng);
        let pm = cam.projection_matrix();
        let mut checked = 0;
        while checked < 100 {
            let p = Vec3::new(rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0));
            let h = pm * nalgebra::Vector4::new(p.x, p.y, p.z, 1.0);
            match project(&cam, &p) {
                Ok(proj) => {
                    assert!((proj.u - h.x / h.z).abs() < 1e-9);
                    assert!((proj.v - h.y / h.z).abs() < 1e-9);
                    assert!((proj.depth - h.z).abs() < 1e-9);
                    checked += 1;
                }
                Err(_) => assert!(h.z <= 0.0),
            }
        }
    }

    #[test]
    fn unproject_round_trip() {
        let mut rng = SplitMix64::new(2);
        let cam = test_camera(&mut rng);
        for _ in 0..500 {
            let u = rng.uniform(0.0, 320.0);
            let v = rng.uniform(0.0, 240.0);
            let z = rng.uniform(0.1, 100.0);
            let p = unproject(&cam, u, v, z);
            let back = project(&cam, &p).unwrap();
            assert!((back.u - u).abs() < 1e-9 && (back.v - v).abs() < 1e-9);
            assert!((back.depth - z).abs() < 1e-9 * z.max(1.0));
        }
    }

    #[test]
    fn camera_to_robot_cases() {
        let id =
            CameraModel::new([1.0, 1.0, 0.0, 0.0], Mat3::identity(), Vec3::zeros(), 1, 1).unwrap();
        let p = Vec3::new(0.3, -2.0, 7.0);
        assert_eq!(camera_to_robot(&id, &p), p);

        let t = Vec3::new(1.0, 2.0, 3.0);
        let shifted = CameraModel { translation: t, ..id.clone() };
        assert_eq!(camera_to_robot(&shifted, &Vec3::zeros()), -t);

        let mut rng = SplitMix64::new(3);
        let cam = test_camera(&mut rng);
        for _ in 0..100 {
            let p = Vec3::new(rng.normal(), rng.normal(), rng.normal());
            let back = camera_to_robot(&cam, &robot_to_camera(&cam, &p));
            assert!((back - p).abs().max() < 1e-12);
        }
    }

    #[test]
    fn rejects_reflection() {
        let r = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(CameraModel::new([1.0, 1.0, 0.0, 0.0], r, Vec3::zeros(), 1, 1).is_err());
    }
}

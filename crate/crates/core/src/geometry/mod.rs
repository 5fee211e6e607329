//! Coordinate transforms, spherical binning, pinhole cameras and
//! similarity alignment.

mod align;
mod camera;
mod spherical;

pub use align::{icp_refine, umeyama_align, IcpConfig, IcpOutcome, Sim3Transform};
pub use camera::{camera_to_robot, project, robot_to_camera, unproject, CameraModel, Projection};
pub use spherical::{
    from_spherical, spherical_cell_volume, to_spherical, voxel_index, voxel_volume, GridSpec,
    SphericalCoord, VoxelIndex, DEFAULT_EPSILON,
};

use thiserror::Error;

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point outside the grid bounds")]
    OutOfRange,
    #[error("point is behind the camera (depth {0})")]
    BehindCamera(f64),
    #[error("degenerate configuration: {0}")]
    Degenerate(&'static str),
    #[error("invalid grid spec: {0}")]
    InvalidGrid(String),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
}

/// Unit quaternion stored as (w, x, y, z).
pub type Quat = [f64; 4];

pub fn quat_normalize(q: Quat) -> Option<Quat> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if n < 1e-12 || !n.is_finite() {
        return None;
    }
    Some([q[0] / n, q[1] / n, q[2] / n, q[3] / n])
}

/// Hamilton product `a ⊗ b`.
pub fn quat_mul(a: Quat, b: Quat) -> Quat {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

/// Rotation matrix of a unit quaternion (w, x, y, z).
pub fn quat_to_matrix(q: Quat) -> Mat3 {
    let [w, x, y, z] = q;
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Quaternion for a rotation of `angle` radians about the unit `axis`.
pub fn quat_from_axis_angle(axis: Vec3, angle: f64) -> Quat {
    let a = axis.normalize();
    let (s, c) = (0.5 * angle).sin_cos();
    [c, a.x * s, a.y * s, a.z * s]
}

pub fn is_finite(p: &Vec3) -> bool {
    p.iter().all(|v| v.is_finite())
}

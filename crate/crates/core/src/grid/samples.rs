use rayon::prelude::*;

use super::GridError;
use crate::frame::FramePacket;
use crate::geometry::{camera_to_robot, Vec3};

/// Position, RGB and viewing direction; the dense feature follows.
pub const ATTRIBUTE_BASE_DIM: usize = 9;

/// Source pixel of a sample. Ordering is (row, col, view), the canonical
/// member order for reductions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PixelRef {
    pub view: u32,
    pub row: u32,
    pub col: u32,
}

impl PixelRef {
    pub fn sort_key(&self) -> (u32, u32, u32) {
        (self.row, self.col, self.view)
    }
}

/// Borrowed view of one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointSample<'a> {
    pub position: Vec3,
    pub rgb: [f64; 3],
    pub view_dir: Vec3,
    pub feature: &'a [f32],
    pub confidence: f32,
    pub origin: PixelRef,
}

/// Lifted samples of one frame, stored column-wise.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleBatch {
    pub feature_dim: usize,
    pub positions: Vec<Vec3>,
    pub rgb: Vec<[f64; 3]>,
    pub view_dirs: Vec<Vec3>,
    pub features: Vec<f32>,
    pub confidence: Vec<f32>,
    pub origins: Vec<PixelRef>,
}

impl SampleBatch {
    pub fn new(feature_dim: usize) -> Self {
        Self { feature_dim, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn get(&self, i: usize) -> PointSample<'_> {
        PointSample {
            position: self.positions[i],
            rgb: self.rgb[i],
            view_dir: self.view_dirs[i],
            feature: &self.features[i * self.feature_dim..(i + 1) * self.feature_dim],
            confidence: self.confidence[i],
            origin: self.origins[i],
        }
    }

    pub fn push(&mut self, s: PointSample<'_>) {
        debug_assert_eq!(s.feature.len(), self.feature_dim);
        self.positions.push(s.position);
        self.rgb.push(s.rgb);
        self.view_dirs.push(s.view_dir);
        self.features.extend_from_slice(s.feature);
        self.confidence.push(s.confidence);
        self.origins.push(s.origin);
    }

    pub fn append(&mut self, mut other: SampleBatch) {
        assert_eq!(self.feature_dim, other.feature_dim);
        self.positions.append(&mut other.positions);
        self.rgb.append(&mut other.rgb);
        self.view_dirs.append(&mut other.view_dirs);
        self.features.append(&mut other.features);
        self.confidence.append(&mut other.confidence);
        self.origins.append(&mut other.origins);
    }

    /// Samples whose index satisfies `keep`, in original order.
    pub fn select(&self, keep: impl Fn(usize) -> bool) -> SampleBatch {
        let mut out = SampleBatch::new(self.feature_dim);
        for i in (0..self.len()).filter(|&i| keep(i)) {
            out.push(self.get(i));
        }
        out
    }

    pub fn attribute_dim(&self) -> usize {
        ATTRIBUTE_BASE_DIM + self.feature_dim
    }

    /// Writes `[position ‖ rgb ‖ view_dir ‖ feature]` into `out`.
    pub fn write_attribute(&self, i: usize, out: &mut Vec<f64>) {
        let p = self.positions[i];
        let c = self.rgb[i];
        let d = self.view_dirs[i];
        out.extend_from_slice(&[p.x, p.y, p.z, c[0], c[1], c[2], d.x, d.y, d.z]);
        out.extend(self.features[i * self.feature_dim..(i + 1) * self.feature_dim].iter().map(|&f| f as f64));
    }
}

/// Lifts every confident pixel of every view into the robot frame.
pub fn assemble_point_samples(frame: &FramePacket, conf_threshold: f32) -> Result<SampleBatch, GridError> {
    frame.validate().map_err(GridError::InvalidFrame)?;
    let per_view: Vec<SampleBatch> = frame
        .views
        .par_iter()
        .enumerate()
        .map(|(v, view)| {
            let mut batch = SampleBatch::new(frame.feature_dim);
            let cam = &view.camera;
            let rt = cam.rotation.transpose();
            let w = frame.width as usize;
            let c = frame.feature_dim;
            for px in 0..view.pixel_count() {
                let conf = view.confidence[px];
                if !(conf >= conf_threshold) {
                    continue;
                }
                let [x, y, z] = view.point(px);
                let p_cam = Vec3::new(x as f64, y as f64, z as f64);
                let norm = p_cam.norm();
                if !(norm > 0.0 && norm.is_finite()) {
                    continue;
                }
                batch.push(super::PointSample {
                    position: camera_to_robot(cam, &p_cam),
                    rgb: view.rgb(px),
                    view_dir: rt * (p_cam / norm),
                    feature: &view.features[px * c..(px + 1) * c],
                    confidence: conf,
                    origin: PixelRef { view: v as u32, row: (px / w) as u32, col: (px % w) as u32 },
                });
            }
            batch
        })
        .collect();
    let mut all = SampleBatch::new(frame.feature_dim);
    for b in per_view {
        all.append(b);
    }
    if all.is_empty() {
        return Err(GridError::EmptyFrame);
    }
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::ViewData;
    use crate::geometry::{quat_from_axis_angle, quat_to_matrix, CameraModel, Mat3};

    fn tiny_frame(conf: f32) -> FramePacket {
        let r = quat_to_matrix(quat_from_axis_angle(Vec3::new(0.2, 1.0, 0.3), 0.7));
        let cam = CameraModel::new([2.0, 2.0, 1.0, 1.0], r, Vec3::new(0.1, -0.2, 0.3), 2, 2).unwrap();
        let view = ViewData {
            camera: cam,
            image: vec![10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 110, 120],
            points: vec![0.1, 0.2, 1.0, -0.3, 0.2, 2.0, 0.5, 0.5, 3.0, 0.0, -1.0, 4.0],
            confidence: vec![conf; 4],
            features: vec![0.25; 4 * 2],
            dynamic_mask: vec![false; 4],
        };
        FramePacket { frame_id: 0, width: 2, height: 2, feature_dim: 2, views: vec![view] }
    }

    #[test]
    fn confident_pixels_become_samples() {
        let frame = tiny_frame(1.0);
        let s = assemble_point_samples(&frame, 0.5).unwrap();
        assert_eq!(s.len(), 4);
        let cam = &frame.views[0].camera;
        for i in 0..4 {
            let [x, y, z] = frame.views[0].point(i);
            let expect = camera_to_robot(cam, &Vec3::new(x as f64, y as f64, z as f64));
            assert!((s.positions[i] - expect).norm() < 1e-9);
            assert!((s.view_dirs[i].norm() - 1.0).abs() < 1e-6);
            // view direction points from the camera center toward the sample
            let toward = (s.positions[i] - cam.center()).normalize();
            assert!((toward - s.view_dirs[i]).norm() < 1e-9);
        }
        assert_eq!(s.origins[3], PixelRef { view: 0, row: 1, col: 1 });
        assert_eq!(s.rgb[1], [40.0 / 255.0, 50.0 / 255.0, 60.0 / 255.0]);
    }

    #[test]
    fn impossible_threshold_is_empty() {
        assert_eq!(assemble_point_samples(&tiny_frame(1.0), 1.1), Err(GridError::EmptyFrame));
    }

    #[test]
    fn threshold_filters() {
        let mut frame = tiny_frame(1.0);
        frame.views[0].confidence = vec![0.2, 0.6, 0.49, 0.5];
        let s = assemble_point_samples(&frame, 0.5).unwrap();
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn inconsistent_maps_rejected() {
        let mut frame = tiny_frame(1.0);
        frame.views[0].features.pop();
        assert!(matches!(assemble_point_samples(&frame, 0.5), Err(GridError::InvalidFrame(_))));
        let mut frame = tiny_frame(1.0);
        frame.views[0].camera.rotation = Mat3::identity();
        assert!(assemble_point_samples(&frame, 0.5).is_ok());
    }

    #[test]
    fn attribute_layout() {
        let s = assemble_point_samples(&tiny_frame(1.0), 0.5).unwrap();
        let mut a = Vec::new();
        s.write_attribute(2, &mut a);
        assert_eq!(a.len(), s.attribute_dim());
        assert_eq!(&a[0..3], s.positions[2].as_slice());
        assert_eq!(&a[3..6], &s.rgb[2]);
        assert_eq!(&a[6..9], s.view_dirs[2].as_slice());
        assert_eq!(&a[9..], &[0.25, 0.25]);
    }
}

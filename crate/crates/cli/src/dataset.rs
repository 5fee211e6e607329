//! On-disk dataset: per frame and camera an image plus raw little-endian
//! maps, with `meta.json` (dimensions) and `calib.json` (cameras).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use sphsplat_core::frame::{FramePacket, ViewData};
use sphsplat_core::geometry::{CameraModel, Mat3, Vec3};

use crate::ppm::{decode_ppm, encode_ppm};

/// Orthonormality tolerance for calibration rotations.
pub const CALIBRATION_TOLERANCE: f64 = 1e-6;
pub const FORMAT_NAME: &str = "sphsplat-dataset";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{}: expected {expected} bytes, found {got}", .file.display())]
    SizeMismatch { file: PathBuf, expected: usize, got: usize },
    #[error("bad calibration: {0}")]
    BadCalibration(String),
    #[error("bad metadata: {0}")]
    BadMeta(String),
    #[error("{}: {reason}", .file.display())]
    Format { file: PathBuf, reason: String },
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub format: String,
    pub version: u32,
    pub height: u32,
    pub width: u32,
    pub feature_dim: usize,
    pub frame_count: u32,
    pub camera_count: usize,
}

/// One camera as stored in `calib.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraEntry {
    #[serde(rename = "K")]
    pub k: [[f64; 3]; 3],
    /// Robot-to-camera rotation, row-major.
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
    pub width: u32,
    pub height: u32,
}

impl CameraEntry {
    pub fn from_camera(c: &CameraModel) -> Self {
        let m = &c.rotation;
        Self {
            k: [[c.fx, 0.0, c.cx], [0.0, c.fy, c.cy], [0.0, 0.0, 1.0]],
            r: [m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(1, 0)], m[(1, 1)], m[(1, 2)], m[(2, 0)], m[(2, 1)], m[(2, 2)]],
            t: [c.translation.x, c.translation.y, c.translation.z],
            width: c.width,
            height: c.height,
        }
    }

    pub fn to_camera(&self) -> Result<CameraModel, DatasetError> {
        let k = &self.k;
        if k[0][1] != 0.0 || k[1][0] != 0.0 || k[2] != [0.0, 0.0, 1.0] {
            return Err(DatasetError::BadCalibration("K must be [[fx,0,cx],[0,fy,cy],[0,0,1]]".into()));
        }
        let cam = CameraModel {
            fx: k[0][0],
            fy: k[1][1],
            cx: k[0][2],
            cy: k[1][2],
            rotation: Mat3::from_row_slice(&self.r),
            translation: Vec3::from(self.t),
            width: self.width,
            height: self.height,
        };
        cam.validate(CALIBRATION_TOLERANCE).map_err(|e| DatasetError::BadCalibration(e.to_string()))?;
        if !cam.translation.iter().all(|v| v.is_finite()) || !cam.cx.is_finite() || !cam.cy.is_finite() {
            return Err(DatasetError::BadCalibration("non-finite camera parameters".into()));
        }
        Ok(cam)
    }
}

/// Cameras shared by all frames, or per frame for a moving rig.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub cameras: Vec<CameraEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<Vec<Vec<CameraEntry>>>,
}

pub fn frame_file(root: &Path, frame: u32, cam: usize, suffix: &str) -> PathBuf {
    root.join(format!("f{frame:06}_cam{cam}{suffix}"))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, DatasetError> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => DatasetError::MissingFile(path.to_path_buf()),
        _ => DatasetError::Io { path: path.to_path_buf(), source: e },
    })
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    fs::write(path, bytes).map_err(|e| DatasetError::Io { path: path.to_path_buf(), source: e })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, DatasetError> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| DatasetError::Format { file: path.to_path_buf(), reason: e.to_string() })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    write_file(path, s.as_bytes())
}

fn f32_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn read_f32s(path: &Path, count: usize) -> Result<Vec<f32>, DatasetError> {
    let bytes = read_file(path)?;
    if bytes.len() != 4 * count {
        return Err(DatasetError::SizeMismatch { file: path.to_path_buf(), expected: 4 * count, got: bytes.len() });
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
}

/// Writes `packets` (frame ids 0, 1, …) under `root`.
pub fn write_dataset(root: &Path, packets: &[FramePacket]) -> Result<(), DatasetError> {
    let mut w = DatasetWriter::create(root)?;
    for p in packets {
        w.push(p)?;
    }
    w.finish()
}

/// Incremental writer: frames go to disk as they are pushed, `meta.json`
/// and `calib.json` on [`DatasetWriter::finish`]. Per-frame cameras are
/// stored only if they change between frames.
#[derive(Debug)]
pub struct DatasetWriter {
    root: PathBuf,
    first: Option<(u32, u32, usize, usize)>,
    cameras: Vec<Vec<CameraEntry>>,
}

impl DatasetWriter {
    pub fn create(root: &Path) -> Result<Self, DatasetError> {
        fs::create_dir_all(root).map_err(|e| DatasetError::Io { path: root.to_path_buf(), source: e })?;
        Ok(Self { root: root.to_path_buf(), first: None, cameras: Vec::new() })
    }

    pub fn push(&mut self, p: &FramePacket) -> Result<(), DatasetError> {
        let i = self.cameras.len();
        if p.frame_id != i as u32 {
            return Err(DatasetError::BadMeta(format!("frame {i} has id {}", p.frame_id)));
        }
        let shape = (p.width, p.height, p.feature_dim, p.views.len());
        if *self.first.get_or_insert(shape) != shape {
            return Err(DatasetError::BadMeta(format!("frame {i} differs in size from frame 0")));
        }
        p.validate().map_err(|e| DatasetError::BadMeta(format!("frame {i}: {e}")))?;
        write_frame(&self.root, p)?;
        self.cameras.push(p.views.iter().map(|v| CameraEntry::from_camera(&v.camera)).collect());
        Ok(())
    }

    pub fn finish(self) -> Result<(), DatasetError> {
        let (width, height, feature_dim, camera_count) =
            self.first.ok_or_else(|| DatasetError::BadMeta("no frames to write".into()))?;
        let moving = self.cameras.iter().any(|c| *c != self.cameras[0]);
        let meta = Meta {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            height,
            width,
            feature_dim,
            frame_count: self.cameras.len() as u32,
            camera_count,
        };
        let calib = Calibration { cameras: self.cameras[0].clone(), frames: moving.then_some(self.cameras) };
        write_json(&self.root.join("meta.json"), &meta)?;
        write_json(&self.root.join("calib.json"), &calib)
    }
}

fn write_frame(root: &Path, p: &FramePacket) -> Result<(), DatasetError> {
    for (c, v) in p.views.iter().enumerate() {
        let f = |s: &str| frame_file(root, p.frame_id, c, s);
        write_file(&f(".ppm"), &encode_ppm(p.width, p.height, &v.image))?;
        write_file(&f("_points.f32"), &f32_bytes(&v.points))?;
        write_file(&f("_conf.f32"), &f32_bytes(&v.confidence))?;
        write_file(&f("_feat.f32"), &f32_bytes(&v.features))?;
        write_file(&f("_mask.u8"), &v.dynamic_mask.iter().map(|&m| m as u8).collect::<Vec<_>>())?;
    }
    Ok(())
}

/// An opened dataset. Frames are read on demand.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub meta: Meta,
    /// Per frame, the validated cameras.
    cameras: Vec<Vec<CameraModel>>,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self, DatasetError> {
        let meta: Meta = read_json(&root.join("meta.json"))?;
        if meta.format != FORMAT_NAME || meta.version != FORMAT_VERSION {
            return Err(DatasetError::BadMeta(format!("unsupported format {} v{}", meta.format, meta.version)));
        }
        if meta.width == 0 || meta.height == 0 || meta.camera_count == 0 {
            return Err(DatasetError::BadMeta("zero image size or camera count".into()));
        }
        let calib: Calibration = read_json(&root.join("calib.json"))?;
        let to_cams = |entries: &[CameraEntry]| -> Result<Vec<CameraModel>, DatasetError> {
            if entries.len() != meta.camera_count {
                return Err(DatasetError::BadCalibration(format!(
                    "{} cameras, meta.json declares {}",
                    entries.len(),
                    meta.camera_count
                )));
            }
            entries
                .iter()
                .map(|e| {
                    if (e.width, e.height) != (meta.width, meta.height) {
                        return Err(DatasetError::BadCalibration("camera size differs from meta.json".into()));
                    }
                    e.to_camera()
                })
                .collect()
        };
        let base = to_cams(&calib.cameras)?;
        let cameras = match &calib.frames {
            None => vec![base; meta.frame_count as usize],
            Some(frames) => {
                if frames.len() != meta.frame_count as usize {
                    return Err(DatasetError::BadCalibration(format!(
                        "{} per-frame camera sets for {} frames",
                        frames.len(),
                        meta.frame_count
                    )));
                }
                frames.iter().map(|f| to_cams(f)).collect::<Result<_, _>>()?
            }
        };
        Ok(Self { root: root.to_path_buf(), meta, cameras })
    }

    pub fn frame_count(&self) -> u32 {
        self.meta.frame_count
    }

    pub fn cameras(&self, frame: u32) -> &[CameraModel] {
        &self.cameras[frame as usize]
    }

    pub fn load_frame(&self, frame: u32) -> Result<FramePacket, DatasetError> {
        if frame >= self.meta.frame_count {
            return Err(DatasetError::BadMeta(format!("frame {frame} out of range ({} frames)", self.meta.frame_count)));
        }
        let (w, h, c) = (self.meta.width, self.meta.height, self.meta.feature_dim);
        let n = w as usize * h as usize;
        let mut views = Vec::with_capacity(self.meta.camera_count);
        for (cam, camera) in self.cameras[frame as usize].iter().enumerate() {
            let f = |s: &str| frame_file(&self.root, frame, cam, s);
            let img_path = f(".ppm");
            let (iw, ih, image) = decode_ppm(&read_file(&img_path)?, &img_path)?;
            if (iw, ih) != (w, h) {
                return Err(DatasetError::Format {
                    file: img_path,
                    reason: format!("image is {iw}x{ih}, meta.json declares {w}x{h}"),
                });
            }
            let mask_path = f("_mask.u8");
            let mask = read_file(&mask_path)?;
            if mask.len() != n {
                return Err(DatasetError::SizeMismatch { file: mask_path, expected: n, got: mask.len() });
            }
            let conf_path = f("_conf.f32");
            let confidence = read_f32s(&conf_path, n)?;
            if confidence.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(DatasetError::Format { file: conf_path, reason: "confidence outside [0, 1]".into() });
            }
            views.push(ViewData {
                camera: camera.clone(),
                image,
                points: read_f32s(&f("_points.f32"), 3 * n)?,
                confidence,
                features: read_f32s(&f("_feat.f32"), c * n)?,
                dynamic_mask: mask.iter().map(|&m| m != 0).collect(),
            });
        }
        Ok(FramePacket { frame_id: frame, width: w, height: h, feature_dim: c, views })
    }

    /// Frames in order, each read when the iterator reaches it.
    pub fn frames(&self) -> impl Iterator<Item = Result<FramePacket, DatasetError>> + '_ {
        (0..self.meta.frame_count).map(|f| self.load_frame(f))
    }
}

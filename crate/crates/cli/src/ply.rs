//! Binary little-endian PLY for Gaussian sets (3DGS property names) and
//! plain point clouds.

use std::path::Path;

use thiserror::Error;

use sphsplat_core::decoder::{GaussianPrimitive, GaussianSet, Provenance, SetKind, MAX_SH_DEGREE};
use sphsplat_core::geometry::Vec3;

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("bad PLY header: {0}")]
    BadHeader(String),
    #[error("unsupported PLY property: {0}")]
    UnsupportedProperty(String),
    #[error("{}: {source}", .path.display())]
    Io { path: std::path::PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    F32,
    F64,
}

impl Scalar {
    fn size(self) -> usize {
        match self {
            Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }
}

struct Header {
    count: usize,
    properties: Vec<(String, Scalar)>,
    body: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, PlyError> {
    let bad = |m: &str| PlyError::BadHeader(m.to_string());
    let end = bytes.windows(11).position(|w| w == b"end_header\n").ok_or_else(|| bad("missing end_header"))?;
    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not text"))?;
    let mut lines = text.lines();
    if lines.next() != Some("ply") {
        return Err(bad("missing ply signature"));
    }
    let mut format = false;
    let mut count = None;
    let mut properties = Vec::new();
    for line in lines {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", "binary_little_endian", "1.0"] => format = true,
            ["format", other, ..] => return Err(bad(&format!("unsupported format {other}"))),
            ["element", "vertex", n] if count.is_none() => {
                count = Some(n.parse::<usize>().map_err(|_| bad("vertex count is not a number"))?);
            }
            ["element", name, ..] => return Err(bad(&format!("unexpected element {name}"))),
            ["property", ty, name] => {
                if count.is_none() {
                    return Err(bad("property before element"));
                }
                let scalar = match *ty {
                    "float" | "float32" => Scalar::F32,
                    "double" | "float64" => Scalar::F64,
                    _ => return Err(PlyError::UnsupportedProperty(format!("{name} of type {ty}"))),
                };
                properties.push((name.to_string(), scalar));
            }
            ["property", ..] => return Err(PlyError::UnsupportedProperty(line.to_string())),
            _ => return Err(bad(&format!("unrecognized line '{line}'"))),
        }
    }
    if !format {
        return Err(bad("missing binary_little_endian format line"));
    }
    let count = count.ok_or_else(|| bad("missing vertex element"))?;
    let body = end + 11;
    let stride: usize = properties.iter().map(|(_, s)| s.size()).sum();
    let expected = count.checked_mul(stride).ok_or_else(|| bad("vertex count overflows"))?;
    if bytes.len() - body != expected {
        return Err(bad(&format!("{count} vertices need {expected} bytes, body has {}", bytes.len() - body)));
    }
    Ok(Header { count, properties, body })
}

/// Row-major values of every vertex, in header property order.
fn read_body(bytes: &[u8], h: &Header) -> Vec<f64> {
    let mut out = Vec::with_capacity(h.count * h.properties.len());
    let mut pos = h.body;
    for _ in 0..h.count {
        for (_, s) in &h.properties {
            out.push(match s {
                Scalar::F32 => f32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as f64,
                Scalar::F64 => f64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap()),
            });
            pos += s.size();
        }
    }
    out
}

fn gaussian_properties(rest: usize) -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
    names.extend((0..3).map(|i| format!("f_dc_{i}")));
    names.extend((0..3 * rest).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names
}

/// Property order follows common 3DGS exports. `f_rest` is channel-major:
/// all red coefficients, then green, then blue.
pub fn encode_gaussians_ply(set: &GaussianSet) -> Vec<u8> {
    let rest = set.sh_rest_count();
    let mut out = format!("ply\nformat binary_little_endian 1.0\nelement vertex {}\n", set.len()).into_bytes();
    for name in gaussian_properties(rest) {
        out.extend_from_slice(format!("property float {name}\n").as_bytes());
    }
    out.extend_from_slice(b"end_header\n");
    for p in &set.primitives {
        let mut row: Vec<f32> = p.mean.to_vec();
        row.extend_from_slice(&p.sh_dc);
        for c in 0..3 {
            row.extend((0..rest).map(|k| p.sh_rest[k][c]));
        }
        row.push(p.opacity_logit);
        row.extend_from_slice(&p.log_scale);
        row.extend_from_slice(&p.rotation);
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Reads a Gaussian PLY written by this crate or by 3DGS tooling (normals
/// are accepted and ignored). The SH degree follows from the `f_rest`
/// count.
pub fn decode_gaussians_ply(bytes: &[u8]) -> Result<GaussianSet, PlyError> {
    let h = parse_header(bytes)?;
    let rest_props = h.properties.iter().filter(|(n, _)| n.starts_with("f_rest_")).count();
    let degree = (0..=MAX_SH_DEGREE)
        .find(|&d| 3 * sphsplat_core::decoder::sh_rest_count(d) == rest_props)
        .ok_or_else(|| PlyError::UnsupportedProperty(format!("{rest_props} f_rest properties")))?;
    let rest = sphsplat_core::decoder::sh_rest_count(degree);
    let wanted = gaussian_properties(rest);
    let mut column = vec![usize::MAX; wanted.len()];
    for (i, (name, _)) in h.properties.iter().enumerate() {
        match wanted.iter().position(|w| w == name) {
            Some(j) if column[j] == usize::MAX => column[j] = i,
            Some(_) => return Err(PlyError::BadHeader(format!("duplicate property {name}"))),
            None if ["nx", "ny", "nz"].contains(&name.as_str()) => {}
            None => return Err(PlyError::UnsupportedProperty(name.clone())),
        }
    }
    if let Some(j) = column.iter().position(|&c| c == usize::MAX) {
        return Err(PlyError::BadHeader(format!("missing property {}", wanted[j])));
    }
    let values = read_body(bytes, &h);
    let width = h.properties.len();
    let mut set = GaussianSet::new(degree, Provenance { frame_id: 0, kind: SetKind::Full });
    set.primitives = values
        .chunks_exact(width.max(1))
        .take(h.count)
        .map(|row| {
            let v = |j: usize| row[column[j]] as f32;
            let mut p = GaussianPrimitive {
                mean: [v(0), v(1), v(2)],
                sh_dc: [v(3), v(4), v(5)],
                ..Default::default()
            };
            for c in 0..3 {
                for k in 0..rest {
                    p.sh_rest[k][c] = v(6 + c * rest + k);
                }
            }
            let b = 6 + 3 * rest;
            p.opacity_logit = v(b);
            p.log_scale = [v(b + 1), v(b + 2), v(b + 3)];
            p.rotation = [v(b + 4), v(b + 5), v(b + 6), v(b + 7)];
            p
        })
        .collect();
    Ok(set)
}

/// Point cloud with double-precision coordinates.
pub fn encode_points_ply(points: &[Vec3]) -> Vec<u8> {
    let mut out = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        points.len()
    )
    .into_bytes();
    for p in points {
        for v in p.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Positions of any vertex PLY with float or double `x y z`; other
/// properties are skipped, so Gaussian PLYs are accepted too.
pub fn decode_points_ply(bytes: &[u8]) -> Result<Vec<Vec3>, PlyError> {
    let h = parse_header(bytes)?;
    let col = |name: &str| {
        h.properties.iter().position(|(n, _)| n == name).ok_or_else(|| PlyError::BadHeader(format!("missing property {name}")))
    };
    let (x, y, z) = (col("x")?, col("y")?, col("z")?);
    let values = read_body(bytes, &h);
    let width = h.properties.len();
    Ok(values.chunks_exact(width).take(h.count).map(|r| Vec3::new(r[x], r[y], r[z])).collect())
}

fn read(path: &Path) -> Result<Vec<u8>, PlyError> {
    std::fs::read(path).map_err(|e| PlyError::Io { path: path.to_path_buf(), source: e })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), PlyError> {
    std::fs::write(path, bytes).map_err(|e| PlyError::Io { path: path.to_path_buf(), source: e })
}

pub fn write_gaussians_ply(path: &Path, set: &GaussianSet) -> Result<(), PlyError> {
    write(path, &encode_gaussians_ply(set))
}

pub fn read_gaussians_ply(path: &Path) -> Result<GaussianSet, PlyError> {
    decode_gaussians_ply(&read(path)?)
}

pub fn write_points_ply(path: &Path, points: &[Vec3]) -> Result<(), PlyError> {
    write(path, &encode_points_ply(points))
}

pub fn read_points_ply(path: &Path) -> Result<Vec<Vec3>, PlyError> {
    decode_points_ply(&read(path)?)
}

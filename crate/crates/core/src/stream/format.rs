//! "RPGS" scene stream: shared primitives once, then per frame the dynamic
//! primitives and the refiner weights. Little-endian throughout.

use std::collections::BTreeMap;

use super::{SceneState, StreamError};
use crate::decoder::{sh_rest_count, GaussianPrimitive, GaussianSet, Provenance, SetKind, MAX_SH_DEGREE};
use crate::mlp::{MlpError, TinyMlp};

pub const RPGS_MAGIC: &[u8; 8] = b"RPGS\0\x01\0\0";
pub const RPGS_VERSION: u32 = 1;
/// Magic, version, frame count, shared count, SH degree, K, reserved.
pub const HEADER_BYTES: usize = 8 + 4 + 4 + 8 + 1 + 1 + 6;
const MAX_REFINER_PARAMS: usize = 1 << 22;

/// Bytes of one packed f32 record: μ, log-scale, q, opacity logit, DC, rest.
pub fn record_bytes(sh_degree: u8) -> usize {
    4 * (14 + 3 * sh_rest_count(sh_degree))
}

fn write_record(out: &mut Vec<u8>, p: &GaussianPrimitive, rest: usize) {
    let fields = p.mean.iter().chain(&p.log_scale).chain(&p.rotation).chain(std::iter::once(&p.opacity_logit)).chain(&p.sh_dc);
    for v in fields.chain(p.sh_rest[..rest].iter().flatten()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn serialize_state(state: &SceneState) -> Result<Vec<u8>, StreamError> {
    state.validate()?;
    let deg = state.shared.sh_degree;
    let rest = sh_rest_count(deg);
    let mut out = Vec::with_capacity(state.serialized_len());
    out.extend_from_slice(RPGS_MAGIC);
    out.extend_from_slice(&RPGS_VERSION.to_le_bytes());
    out.extend_from_slice(&(state.frame_count() as u32).to_le_bytes());
    out.extend_from_slice(&(state.shared.len() as u64).to_le_bytes());
    out.push(deg);
    out.push(state.gaussians_per_voxel);
    out.extend_from_slice(&[0u8; 6]);
    for p in &state.shared.primitives {
        write_record(&mut out, p, rest);
    }
    for (&id, refiner) in &state.refiners {
        let dynamic = &state.dynamic[&id];
        out.extend_from_slice(&id.to_le_bytes());
        out.extend_from_slice(&(dynamic.len() as u64).to_le_bytes());
        for p in &dynamic.primitives {
            write_record(&mut out, p, rest);
        }
        refiner.write_to(&mut out).expect("writing to memory");
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], StreamError> {
        if self.bytes.len() < n {
            return Err(StreamError::TruncatedStream);
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32, StreamError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, StreamError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// `count` records, rejecting counts the remaining bytes cannot hold
    /// before allocating.
    fn records(&mut self, count: u64, deg: u8) -> Result<Vec<GaussianPrimitive>, StreamError> {
        let size = record_bytes(deg);
        let count = usize::try_from(count).map_err(|_| StreamError::TruncatedStream)?;
        if count.checked_mul(size).is_none_or(|n| n > self.bytes.len()) {
            return Err(StreamError::TruncatedStream);
        }
        let rest = sh_rest_count(deg);
        let raw = self.take(count * size)?;
        Ok(raw
            .chunks_exact(size)
            .map(|rec| {
                let mut f = rec.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
                let mut next3 = || [f.next().unwrap(), f.next().unwrap(), f.next().unwrap()];
                let mean = next3();
                let log_scale = next3();
                let mut p = GaussianPrimitive { mean, log_scale, ..Default::default() };
                p.rotation = [f.next().unwrap(), f.next().unwrap(), f.next().unwrap(), f.next().unwrap()];
                p.opacity_logit = f.next().unwrap();
                p.sh_dc = [f.next().unwrap(), f.next().unwrap(), f.next().unwrap()];
                for k in 0..rest {
                    p.sh_rest[k] = [f.next().unwrap(), f.next().unwrap(), f.next().unwrap()];
                }
                p
            })
            .collect())
    }
}

pub fn deserialize_state(bytes: &[u8]) -> Result<SceneState, StreamError> {
    let mut c = Cursor { bytes };
    let magic = c.take(8).map_err(|_| StreamError::BadMagic)?;
    if magic[..4] != RPGS_MAGIC[..4] {
        return Err(StreamError::BadMagic);
    }
    if magic != RPGS_MAGIC {
        return Err(StreamError::VersionMismatch { found: u32::from(magic[5]) });
    }
    let version = c.u32()?;
    if version != RPGS_VERSION {
        return Err(StreamError::VersionMismatch { found: version });
    }
    let frames = c.u32()?;
    let shared_count = c.u64()?;
    let head = c.take(8)?;
    let (deg, k) = (head[0], head[1]);
    if deg > MAX_SH_DEGREE || k == 0 {
        return Err(StreamError::InvalidStream(format!("SH degree {deg}, K {k}")));
    }
    if head[2..] != [0u8; 6] {
        return Err(StreamError::InvalidStream("reserved header bytes are not zero".into()));
    }
    let mut state = SceneState::new(deg, k);
    state.shared.primitives = c.records(shared_count, deg)?;
    for _ in 0..frames {
        let id = c.u32()?;
        let n = c.u64()?;
        let mut set = GaussianSet::new(deg, Provenance { frame_id: id, kind: SetKind::Dynamic });
        set.primitives = c.records(n, deg)?;
        let refiner = TinyMlp::read_from(&mut c.bytes, MAX_REFINER_PARAMS).map_err(|e| match e {
            MlpError::Truncated => StreamError::TruncatedStream,
            other => StreamError::InvalidStream(other.to_string()),
        })?;
        if state.refiners.insert(id, refiner).is_some() {
            return Err(StreamError::InvalidStream(format!("frame {id} appears twice")));
        }
        state.dynamic.insert(id, set);
    }
    if !c.bytes.is_empty() {
        return Err(StreamError::InvalidStream(format!("{} trailing bytes", c.bytes.len())));
    }
    state.validate()?;
    Ok(state)
}

/// Size of storing every frame's full decode independently, as the same
/// packed records: the baseline the shared/dynamic split is measured
/// against.
pub fn naive_concatenation_len(per_frame_counts: &[usize], sh_degree: u8) -> usize {
    per_frame_counts.iter().map(|n| n * record_bytes(sh_degree)).sum()
}

/// Frame id → dynamic count, for inspection without decoding records.
pub fn frame_table(state: &SceneState) -> BTreeMap<u32, usize> {
    state.dynamic.iter().map(|(&id, s)| (id, s.len())).collect()
}

//! Frame-to-Gaussians pipeline: sample assembly, anchor aggregation and
//! decoding with one set of weights.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoder::{decode_grid, DecodeError, DecoderConfig, DecoderHeads, GaussianSet, Provenance, SetKind};
use crate::frame::FramePacket;
use crate::geometry::GridSpec;
use crate::grid::{
    assemble_point_samples, build_anchor_grid, AggregationConfig, AnchorGrid, AnchorWeights, ConvKernel, GridError,
    SampleBatch, ATTRIBUTE_BASE_DIM,
};
use crate::mlp::{MlpError, TinyMlp};
use crate::rng::SplitMix64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("weights do not match the configuration: {0}")]
    WeightMismatch(String),
}

/// Grid, aggregation and decoder settings plus the sizes of seeded weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub grid: GridSpec,
    pub aggregation: AggregationConfig,
    pub decoder: DecoderConfig,
    /// Hidden width of each decoder head.
    pub head_hidden: usize,
    /// Noise gain of the seeded convolution kernel around identity.
    pub conv_gain: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            aggregation: AggregationConfig::default(),
            decoder: DecoderConfig::default(),
            head_hidden: 32,
            conv_gain: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub anchors: AnchorWeights,
    pub heads: DecoderHeads,
}

/// Anchor grid and the primitives decoded from it; primitive `k·K + j` is
/// slot `j` of grid cell `k`.
#[derive(Debug, Clone)]
pub struct DecodedFrame {
    pub anchors: AnchorGrid,
    pub set: GaussianSet,
}

const WEIGHTS_MAGIC: &[u8; 8] = b"SPWT\0\x01\0\0";
const MAX_WEIGHT_PARAMS: usize = 1 << 24;

impl Model {
    /// Deterministic weights for a given feature width.
    pub fn seeded(config: ModelConfig, feature_dim: usize, seed: u64) -> Self {
        let agg = &config.aggregation;
        let mut rng = SplitMix64::derive(seed, 0x7e1_6475);
        let mut pool = TinyMlp::seeded(&[ATTRIBUTE_BASE_DIM + feature_dim + 3, agg.pool_hidden, agg.anchor_dim], &mut rng);
        pool.quantize_f32();
        let conv = ConvKernel::seeded(agg.anchor_dim, config.conv_gain, &mut rng);
        let heads = DecoderHeads::seeded(&config.decoder, agg.anchor_dim, config.head_hidden, &mut rng);
        Self { config, anchors: AnchorWeights { pool, conv }, heads }
    }

    /// Feature width the pooling MLP was built for.
    pub fn feature_dim(&self) -> usize {
        self.anchors.pool.input_dim().saturating_sub(ATTRIBUTE_BASE_DIM + 3)
    }

    pub fn check(&self, feature_dim: usize) -> Result<(), PipelineError> {
        let d = self.config.aggregation.anchor_dim;
        let mismatch = |m: String| Err(PipelineError::WeightMismatch(m));
        if self.feature_dim() != feature_dim || self.anchors.pool.input_dim() < ATTRIBUTE_BASE_DIM + 3 {
            return mismatch(format!("pooling MLP expects {} feature channels, data has {feature_dim}", self.feature_dim()));
        }
        if self.anchors.pool.output_dim() != d || self.anchors.conv.dim() != d {
            return mismatch(format!("anchor width differs from configured {d}"));
        }
        self.config.grid.validate().map_err(|e| PipelineError::WeightMismatch(e.to_string()))?;
        self.config.decoder.validate()?;
        self.heads.check(&self.config.decoder, d)?;
        Ok(())
    }

    pub fn decode_samples(&self, samples: &SampleBatch, frame_id: u32) -> Result<DecodedFrame, PipelineError> {
        let anchors = build_anchor_grid(samples, &self.config.grid, &self.anchors, &self.config.aggregation)?;
        let mut set = decode_grid(&anchors.grid, &self.config.decoder, &self.heads)?;
        set.provenance = Provenance { frame_id, kind: SetKind::Full };
        Ok(DecodedFrame { anchors, set })
    }

    pub fn samples(&self, frame: &FramePacket) -> Result<SampleBatch, PipelineError> {
        self.check(frame.feature_dim)?;
        Ok(assemble_point_samples(frame, self.config.aggregation.confidence_threshold)?)
    }

    pub fn decode_frame(&self, frame: &FramePacket) -> Result<DecodedFrame, PipelineError> {
        let samples = self.samples(frame)?;
        self.decode_samples(&samples, frame.frame_id)
    }

    /// Weight bundle: magic, pooling MLP, convolution kernel, decoder heads.
    pub fn write_weights<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(WEIGHTS_MAGIC)?;
        self.anchors.pool.write_to(w)?;
        self.anchors.conv.write_to(w)?;
        self.heads.write_to(w)
    }

    /// Reads a weight bundle and checks it against `config`.
    pub fn read_weights<R: Read>(config: ModelConfig, r: &mut R) -> Result<Self, PipelineError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| PipelineError::WeightMismatch("truncated weight file".into()))?;
        if &magic != WEIGHTS_MAGIC {
            return Err(PipelineError::WeightMismatch("not a weight bundle".into()));
        }
        let wrap = |e: MlpError| PipelineError::WeightMismatch(e.to_string());
        let pool = TinyMlp::read_from(r, MAX_WEIGHT_PARAMS).map_err(wrap)?;
        let conv = ConvKernel::read_from(r, 4096).map_err(wrap)?;
        let heads = DecoderHeads::read_from(r, MAX_WEIGHT_PARAMS).map_err(wrap)?;
        let model = Self { config, anchors: AnchorWeights { pool, conv }, heads };
        model.check(model.feature_dim())?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::{generate_sequence, LayoutParams, RigSpec, SynthOptions, SyntheticScene};

    #[test]
    fn weights_round_trip() {
        let m = Model::seeded(ModelConfig::default(), 8, 3);
        m.check(8).unwrap();
        let mut buf = Vec::new();
        m.write_weights(&mut buf).unwrap();
        let back = Model::read_weights(ModelConfig::default(), &mut buf.as_slice()).unwrap();
        assert_eq!(back, m);
        buf[0] = b'X';
        assert!(Model::read_weights(ModelConfig::default(), &mut buf.as_slice()).is_err());
        let other = ModelConfig { decoder: DecoderConfig { gaussians_per_voxel: 3, ..Default::default() }, ..Default::default() };
        let mut buf = Vec::new();
        m.write_weights(&mut buf).unwrap();
        assert!(Model::read_weights(other, &mut buf.as_slice()).is_err());
    }

    #[test]
    fn decodes_synthetic_frame() {
        let scene = SyntheticScene::open_air(1, &LayoutParams::default());
        let rig = RigSpec { width: 80, height: 60, ..Default::default() };
        let (frames, _) = generate_sequence(&scene, &rig, SynthOptions::default(), 1, 1).unwrap();
        let m = Model::seeded(ModelConfig::default(), 8, 1);
        let out = m.decode_frame(&frames[0]).unwrap();
        assert_eq!(out.set.len(), 2 * out.anchors.grid.len());
        assert!(out.set.primitives.iter().all(|p| p.is_finite()));
        assert!(m.decode_frame(&frames[0].with_masks(false)).is_ok());
        let mut empty = frames[0].clone();
        empty.views.iter_mut().for_each(|v| v.confidence.iter_mut().for_each(|c| *c = 0.0));
        assert_eq!(m.decode_frame(&empty).unwrap_err(), PipelineError::Grid(GridError::EmptyFrame));
    }
}

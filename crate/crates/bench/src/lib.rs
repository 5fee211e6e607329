//! Shared fixtures for the benchmarks.

use sphsplat_core::frame::FramePacket;
use sphsplat_core::pipeline::{Model, ModelConfig};
use sphsplat_core::scenegen::{LayoutParams, RigSpec, SequenceGenerator, SynthOptions, SyntheticScene};

/// Frames `0..count` of the default open-air scene on a rig of the given size.
pub fn frames(width: u32, height: u32, count: u32, with_mover: bool, seed: u64) -> Vec<FramePacket> {
    let scene = SyntheticScene::open_air(seed, &LayoutParams { with_mover, ..Default::default() });
    let rig = RigSpec { width, height, ..Default::default() };
    let generator = SequenceGenerator::new(&scene, &rig, SynthOptions::default(), seed).expect("valid rig");
    (0..count).map(|f| generator.frame(f).0).collect()
}

pub fn model(seed: u64) -> Model {
    Model::seeded(ModelConfig::default(), 8, seed)
}

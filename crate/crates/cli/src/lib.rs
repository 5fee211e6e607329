//! Dataset, PLY, PPM and configuration I/O plus the `sphsplat` commands.

pub mod app;
pub mod config;
pub mod dataset;
pub mod ply;
pub mod ppm;
pub mod selftest;

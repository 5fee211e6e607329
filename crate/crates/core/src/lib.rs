pub mod decoder;
pub mod frame;
pub mod geometry;
pub mod grid;
pub mod metrics;
pub mod mlp;
pub mod pipeline;
pub mod render;
pub mod rng;
pub mod scenegen;
pub mod spatial;
pub mod stream;

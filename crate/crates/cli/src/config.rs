//! TOML run configuration. Every section and key is optional; unknown keys
//! are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sphsplat_core::metrics::LossWeights;
use sphsplat_core::pipeline::ModelConfig;
use sphsplat_core::render::RenderConfig;
use sphsplat_core::scenegen::{LayoutParams, RigSpec, SynthOptions};
use sphsplat_core::stream::StreamConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root seed; `--seed` overrides it.
    pub seed: u64,
    /// Weight bundle written by `init-weights`; seeded weights when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
    pub model: ModelConfig,
    pub render: RenderConfig,
    pub stream: StreamConfig,
    pub loss: LossWeights,
    pub scene: LayoutParams,
    pub rig: RigSpec,
    pub synth: SynthOptions,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Ground-truth cloud samples per square meter of surface.
    pub gt_density: f64,
    /// Align predictions to ground truth before Chamfer distances.
    pub align: bool,
    /// Background for renders: `solid` or `elevation` (band colors
    /// estimated from the source views).
    pub background: BackgroundKind,
    pub background_color: [f64; 3],
    /// Band height of the elevation background in degrees.
    pub elevation_step_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackgroundKind {
    Solid,
    Elevation,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            gt_density: 20.0,
            align: true,
            background: BackgroundKind::Elevation,
            background_color: [0.0; 3],
            elevation_step_deg: 1.0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{}: {source}", .path.display())]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", .path.display())]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read { path: path.to_path_buf(), source: e })?;
        let mut cfg = Self::from_toml(&text, path)?;
        // Relative weight paths resolve against the config file.
        if let (Some(w), Some(dir)) = (&cfg.weights, path.parent()) {
            if w.is_relative() {
                cfg.weights = Some(dir.join(w));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: String| ConfigError::Invalid(e);
        self.model.grid.validate().map_err(|e| invalid(e.to_string()))?;
        self.model.decoder.validate().map_err(|e| invalid(e.to_string()))?;
        self.loss.validate().map_err(|e| invalid(e.to_string()))?;
        self.rig.validate().map_err(|e| invalid(e.to_string()))?;
        let s = &self.stream;
        if s.range_width == 0 || s.range_height == 0 {
            return Err(invalid("stream range image size must be positive".into()));
        }
        if !(self.eval.gt_density > 0.0) || !(self.eval.elevation_step_deg > 0.0 && self.eval.elevation_step_deg <= 180.0) {
            return Err(invalid("eval.gt_density and eval.elevation_step_deg must be positive".into()));
        }
        Ok(())
    }
}

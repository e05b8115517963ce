use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::descriptor::{FixedWeights, DEFAULT_QUEUE_CAPACITY};
use crate::geometry::GeometryConfig;
use crate::io::{read_file, write_file, IoError};
use crate::mapper::MapperConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum FusionConfig {
    Fixed {
        #[serde(flatten)]
        weights: FixedWeights,
    },
    /// Checkpoint paths are resolved against the config file's directory.
    Merger { checkpoint: PathBuf },
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig::Fixed { weights: FixedWeights::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mapper: MapperConfig,
    pub geometry: GeometryConfig,
    pub fusion: FusionConfig,
    pub queue_capacity: usize,
    /// Process each keyframe's descriptors before the next keyframe is mapped.
    pub deterministic: bool,
    /// Expected descriptor dimension; checked against the embeddings.
    pub dim: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mapper: MapperConfig::default(),
            geometry: GeometryConfig::default(),
            fusion: FusionConfig::default(),
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            deterministic: false,
            dim: None,
        }
    }
}

impl PipelineConfig {
    /// Settings tuned for the rendered synthetic scenes: masks are exact and
    /// the resolution is low, so new segments need larger masks and points
    /// can be coarser.
    pub fn synthetic() -> Self {
        let mut c = Self::default();
        c.mapper.min_new_mask_pixels = 600;
        c.geometry.voxel_size = 0.04;
        c
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.mapper.heap_capacity == 0 {
            return Err("mapper.heap_capacity must be >= 1".into());
        }
        let g = &self.geometry;
        if g.stride == 0 {
            return Err("geometry.stride must be >= 1".into());
        }
        if !(g.voxel_size > 0.0 && g.voxel_size.is_finite()) {
            return Err("geometry.voxel_size must be positive".into());
        }
        if !(g.occlusion_abs >= 0.0 && g.occlusion_rel >= 0.0 && g.z_min > 0.0) {
            return Err("occlusion constants must be >= 0 and z_min > 0".into());
        }
        if self.queue_capacity == 0 {
            return Err("queue_capacity must be >= 1".into());
        }
        if let FusionConfig::Fixed { weights } = &self.fusion {
            FixedWeights::new(weights.alpha, weights.beta).map_err(|e| e.to_string())?;
        }
        if self.dim == Some(0) {
            return Err("dim must be positive".into());
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        let c: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let bytes = read_file(path)?;
        let text = std::str::from_utf8(&bytes).map_err(|e| IoError::format(path, e.to_string()))?;
        let mut c = Self::from_toml(text).map_err(|m| IoError::format(path, m))?;
        if let FusionConfig::Merger { checkpoint } = &mut c.fusion {
            if checkpoint.is_relative() {
                if let Some(dir) = path.parent() {
                    *checkpoint = dir.join(&*checkpoint);
                }
            }
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        write_file(path, self.to_toml().as_bytes())
    }
}

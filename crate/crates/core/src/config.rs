//! The TOML run configuration shared by every pipeline command. Unknown keys
//! are rejected so typos cannot silently fall back to defaults.

use crate::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::ingest::IngestConfig;
use crate::stgraph::GraphConfig;
use crate::train::{LearningMode, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub augment: AugmentConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Manifest of the training pool, resolved relative to the config file.
    pub train_manifest: Option<String>,
    pub val_manifest: Option<String>,
    /// Label strings in class-index order.
    pub classes: Vec<String>,
    pub working_fps: f64,
    pub clip_len: usize,
    /// Defaults to `clip_len` (non-overlapping windows).
    pub clip_stride: Option<usize>,
    pub score_threshold: f64,
    pub lane_raster_step: f64,
    /// Lane interaction scale; defaults to the edge-weight scale.
    pub lane_sigma: Option<f64>,
    pub lane_sum_normalized: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            train_manifest: None,
            val_manifest: None,
            classes: Vec::new(),
            working_fps: 2.5,
            clip_len: 10,
            clip_stride: None,
            score_threshold: 0.5,
            lane_raster_step: 4.0,
            lane_sigma: None,
            lane_sum_normalized: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub embed_dim: usize,
    pub normalize: bool,
    pub temperature: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { embed_dim: 64, normalize: true, temperature: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub mode: LearningMode,
    pub unsup_flavor: LearningMode,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_init: f64,
    pub lr_min: f64,
    pub margin_fraction: f64,
    pub unlabeled_weight: f64,
    pub seed: u64,
    pub eval_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            mode: t.mode,
            unsup_flavor: t.unsup_flavor,
            batch_size: t.batch_size,
            epochs: t.epochs,
            lr_init: t.lr_init,
            lr_min: t.lr_min,
            margin_fraction: t.margin_fraction,
            unlabeled_weight: t.unlabeled_weight,
            seed: t.seed,
            eval_every: t.eval_every,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read '{}': {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::config(format!("serialize config: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn ingest_config(&self) -> IngestConfig {
        IngestConfig {
            working_fps: self.data.working_fps,
            clip_len: self.data.clip_len,
            clip_stride: self.data.clip_stride.unwrap_or(self.data.clip_len),
            score_threshold: self.data.score_threshold,
            lane_raster_step: self.data.lane_raster_step,
            classes: self.data.classes.clone(),
        }
    }

    pub fn graph_config(&self) -> GraphConfig {
        GraphConfig {
            sigma_lane: self.data.lane_sigma,
            lane_sum_normalized: self.data.lane_sum_normalized,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            mode: self.train.mode,
            unsup_flavor: self.train.unsup_flavor,
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            lr_init: self.train.lr_init,
            lr_min: self.train.lr_min,
            margin_fraction: self.train.margin_fraction,
            unlabeled_weight: self.train.unlabeled_weight,
            temperature: self.model.temperature,
            normalize: self.model.normalize,
            seed: self.train.seed,
            embed_dim: self.model.embed_dim,
            eval_every: self.train.eval_every,
            augment: self.augment.clone(),
        }
    }
}

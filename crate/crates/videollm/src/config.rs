//! Declarative run configuration.
//!
//! Every section is optional and falls back to its defaults; unknown keys
//! are rejected. The model shape follows from the world (feature width,
//! frames per unit, categories and vocabulary) plus the reasoner, tuning and
//! head sections.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use videollm_core::adapters::TuningConfig;
use videollm_core::heads::SummarySource;
use videollm_core::model::ModelConfig;
use videollm_core::reasoner::ReasonerConfig;
use videollm_core::synthworld::{build_world, World, WorldConfig};
use videollm_core::trainer::TrainConfig;

use crate::error::{CliError, Result};

/// Dataset sizes and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_samples: usize,
    pub eval_samples: usize,
    /// Units per stream.
    pub units: usize,
    /// Streams with more segments are skipped.
    pub max_segments: Option<usize>,
    pub train_seed: u64,
    pub eval_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_samples: 400,
            eval_samples: 100,
            units: 32,
            max_segments: None,
            train_seed: 1_000,
            eval_seed: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadsConfig {
    /// Anticipation horizons.
    pub horizons: usize,
    /// Anticipation gap in units.
    pub gap: usize,
    /// Memory-head proposals.
    pub proposals: usize,
    pub summary: SummarySource,
}

impl Default for HeadsConfig {
    fn default() -> Self {
        Self {
            horizons: 4,
            gap: 0,
            proposals: 10,
            summary: SummarySource::QueryToken,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Dataset directory written by `synth`; generated in memory when absent.
    pub dataset: Option<PathBuf>,
    /// Checkpoint read by `eval` and `stream`.
    pub checkpoint: Option<PathBuf>,
    /// Checkpoint whose reasoner initializes training.
    pub pretrained: Option<PathBuf>,
}

fn default_reasoner() -> ReasonerConfig {
    ReasonerConfig::gpt2_like(2, 4, 64, 1024)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub world: WorldConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default = "default_reasoner")]
    pub reasoner: ReasonerConfig,
    #[serde(default = "TuningConfig::basic")]
    pub tuning: TuningConfig,
    #[serde(default)]
    pub heads: HeadsConfig,
    /// Seed of the model initialization.
    #[serde(default)]
    pub model_seed: u64,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            data: DataConfig::default(),
            reasoner: default_reasoner(),
            tuning: TuningConfig::basic(),
            heads: HeadsConfig::default(),
            model_seed: 0,
            train: TrainConfig::default(),
            paths: Paths::default(),
        }
    }
}

fn in_section(section: &str, e: videollm_core::Error) -> CliError {
    match e {
        videollm_core::Error::Config { field, reason } => CliError::config(format!("{section}.{field}"), reason),
        other => CliError::from(other),
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            // serde reports the offending key inside backticks.
            let field = msg.split('`').nth(1).unwrap_or("config").to_string();
            CliError::config(field, msg)
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
        let cfg = Self::from_json(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets the model-initialization and training seeds.
    pub fn override_seed(&mut self, seed: u64) {
        self.model_seed = seed;
        self.train.seed = seed;
    }

    pub fn world(&self) -> Result<World> {
        build_world(&self.world).map_err(|e| in_section("world", e))
    }

    pub fn model_config(&self, world: &World) -> ModelConfig {
        ModelConfig {
            feature_dim: self.world.feature_dim,
            frames_per_unit: self.world.frames_per_unit,
            classes: self.world.classes,
            vocab_size: world.vocab().size(),
            reasoner: self.reasoner,
            tuning: self.tuning,
            horizons: self.heads.horizons,
            gap: self.heads.gap,
            proposals: self.heads.proposals,
            summary: self.heads.summary,
            // Room for the end-of-text token.
            caption_len: self.world.caption_len + 1,
            seed: self.model_seed,
        }
    }

    /// Checks every section; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        self.world.validate().map_err(|e| in_section("world", e))?;
        let d = &self.data;
        if d.units == 0 {
            return Err(CliError::config("data.units", "must be ≥ 1"));
        }
        if d.train_samples == 0 {
            return Err(CliError::config("data.train_samples", "must be ≥ 1"));
        }
        if d.eval_samples == 0 {
            return Err(CliError::config("data.eval_samples", "must be ≥ 1"));
        }
        if d.max_segments == Some(0) {
            return Err(CliError::config("data.max_segments", "must be ≥ 1"));
        }
        let ranges_overlap = d.train_seed < d.eval_seed.saturating_add(d.eval_samples as u64 * 64)
            && d.eval_seed < d.train_seed.saturating_add(d.train_samples as u64 * 64);
        if ranges_overlap {
            return Err(CliError::config("data.eval_seed", "train and eval seed ranges overlap"));
        }
        self.reasoner.validate().map_err(|e| in_section("reasoner", e))?;
        self.tuning.validate().map_err(|e| in_section("tuning", e))?;
        self.train.validate().map_err(|e| in_section("train", e))?;
        let world = self.world()?;
        self.model_config(&world).validate().map_err(|e| in_section("model", e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_default() {
        let c = RunConfig::from_json("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_name() {
        for (text, field) in [
            (r#"{"wrold": {}}"#, "wrold"),
            (r#"{"world": {"clases": 3}}"#, "clases"),
            (r#"{"train": {"lr": 0.1}}"#, "lr"),
        ] {
            match RunConfig::from_json(text) {
                Err(e @ CliError::Config { .. }) => {
                    assert_eq!(e.exit_code(), 2);
                    assert!(e.to_string().contains(field), "{e}");
                }
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn invalid_values_name_the_field() {
        let c = RunConfig::from_json(r#"{"world": {"classes": 1}}"#).unwrap();
        match c.validate() {
            Err(CliError::Config { field, .. }) => assert_eq!(field, "world.classes"),
            other => panic!("{other:?}"),
        }
        let c = RunConfig::from_json(r#"{"train": {"batch_size": 0}}"#).unwrap();
        assert!(matches!(c.validate(), Err(CliError::Config { field, .. }) if field == "train.batch_size"));
        let c = RunConfig::from_json(r#"{"data": {"eval_seed": 1000}}"#).unwrap();
        assert!(matches!(c.validate(), Err(CliError::Config { field, .. }) if field == "data.eval_seed"));
    }

    #[test]
    fn model_shape_follows_the_world() {
        let mut c = RunConfig::default();
        c.world.classes = 5;
        c.world.feature_dim = 12;
        let w = c.world().unwrap();
        let m = c.model_config(&w);
        assert_eq!((m.classes, m.feature_dim, m.vocab_size), (5, 12, w.vocab().size()));
        c.override_seed(42);
        assert_eq!((c.model_seed, c.train.seed), (42, 42));
    }
}

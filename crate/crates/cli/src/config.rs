//! Experiment configuration: one JSON document, overridden by command-line
//! flags, falling back to defaults.

use std::fmt;
use std::path::{Path, PathBuf};

use reckit_core::evaluation::EvalConfig;
use reckit_core::tuning::{HyperGrid, SearchSpace, TuneMetric};
use reckit_core::{ModelSpec, RatingScale};
use serde::Deserialize;

/// Failure tied to a configuration field.
#[derive(Debug)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config field `{}`: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub split: SplitConfig,
    pub model: Option<ModelSpec>,
    pub ensemble: Option<ModelSpec>,
    #[serde(default)]
    pub evaluation: EvalConfig,
    pub tuning: Option<TuningConfig>,
    #[serde(default)]
    pub segmentation: SegmentationConfig,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Full ratings file, partitioned according to `split`.
    pub ratings: Option<PathBuf>,
    /// Pre-split files, used instead of `ratings` + `split`.
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub items: Option<PathBuf>,
    pub transactions: Option<PathBuf>,
    pub scale: RatingScale,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Random,
    Stratified,
    Time,
    Kfold,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub strategy: Strategy,
    pub test_fraction: f64,
    /// Share of the training part moved into a validation set.
    pub validation_fraction: Option<f64>,
    /// Time split cutoff; defaults to the timestamp quantile at `1 - test_fraction`.
    pub cutoff: Option<i64>,
    pub folds: usize,
    pub fold: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Random,
            test_fraction: 0.2,
            validation_fraction: None,
            cutoff: None,
            folds: 5,
            fold: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSearchConfig {
    pub space: SearchSpace,
    pub trials: usize,
}

fn default_base() -> ModelSpec {
    ModelSpec::Mf { train: Default::default() }
}
fn default_tune_validation() -> f64 {
    0.2
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningConfig {
    /// Model whose training configuration is searched.
    #[serde(default = "default_base")]
    pub base: ModelSpec,
    #[serde(default = "default_metric")]
    pub metric: TuneMetric,
    pub grid: Option<HyperGrid>,
    pub random: Option<RandomSearchConfig>,
    /// Score grid cells by k-fold cross-validation on the training part.
    pub folds: Option<usize>,
    /// Used when the split did not already carve a validation set.
    #[serde(default = "default_tune_validation")]
    pub validation_fraction: f64,
}

fn default_metric() -> TuneMetric {
    TuneMetric::Rmse
}

fn default_max_iters() -> usize {
    100
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KMeansConfig {
    pub k: usize,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationConfig {
    /// Epoch seconds or RFC 3339; defaults to the latest transaction.
    pub reference_time: Option<String>,
    pub kmeans: Option<KMeansConfig>,
}

impl ExperimentConfig {
    /// Parse `text`, reporting the JSON path of the first bad field.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let field = if path == "." { "<root>".to_string() } else { path };
            ConfigError::new(field, e.into_inner().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("--config", format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new("")));
        Ok(cfg)
    }

    /// Make relative data paths relative to the config file's directory.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        let d = &mut self.data;
        for p in [&mut d.ratings, &mut d.train, &mut d.test, &mut d.items, &mut d.transactions] {
            fix(p);
        }
        fix(&mut self.output);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.split;
        if !(s.test_fraction > 0.0 && s.test_fraction < 1.0) {
            return Err(ConfigError::new("split.test_fraction", format!("must lie in (0, 1), got {}", s.test_fraction)));
        }
        if let Some(v) = s.validation_fraction {
            if !(v > 0.0 && v < 1.0) {
                return Err(ConfigError::new("split.validation_fraction", format!("must lie in (0, 1), got {v}")));
            }
        }
        if s.strategy == Strategy::Kfold && (s.folds < 2 || s.fold >= s.folds) {
            return Err(ConfigError::new("split.fold", format!("need folds >= 2 and fold < folds, got {}/{}", s.fold, s.folds)));
        }
        self.evaluation.validate().map_err(|e| ConfigError::new("evaluation", e.to_string()))?;
        if let Some(m) = &self.model {
            if m.is_ensemble() {
                return Err(ConfigError::new("model.algorithm", "ensemble algorithms belong under `ensemble`"));
            }
        }
        if let Some(e) = &self.ensemble {
            if !e.is_ensemble() {
                return Err(ConfigError::new("ensemble.algorithm", "not an ensemble algorithm; use `model`"));
            }
        }
        if let Some(t) = &self.tuning {
            if t.grid.is_some() == t.random.is_some() {
                return Err(ConfigError::new("tuning", "set exactly one of `grid` and `random`"));
            }
            if t.base.train_config().is_none() {
                return Err(ConfigError::new("tuning.base.algorithm", "must be one of mf, tensor, fm, bagging, boosting"));
            }
            if t.folds.is_some() && t.random.is_some() {
                return Err(ConfigError::new("tuning.folds", "cross-validation is only supported with `grid`"));
            }
            if let Some(g) = &t.grid {
                g.validate().map_err(|e| ConfigError::new("tuning.grid", e.to_string()))?;
            }
            if let Some(r) = &t.random {
                r.space.validate().map_err(|e| ConfigError::new("tuning.random.space", e.to_string()))?;
                if r.trials == 0 {
                    return Err(ConfigError::new("tuning.random.trials", "must be at least 1"));
                }
            }
        }
        Ok(())
    }

    /// The single model or ensemble spec to train.
    pub fn model_spec(&self) -> Result<&ModelSpec, ConfigError> {
        match (&self.model, &self.ensemble) {
            (Some(m), None) => Ok(m),
            (None, Some(e)) => Ok(e),
            (None, None) => Err(ConfigError::new("model", "missing field `model` (or `ensemble`)")),
            (Some(_), Some(_)) => Err(ConfigError::new("ensemble", "set only one of `model` and `ensemble`")),
        }
    }
}

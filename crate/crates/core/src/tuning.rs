//! Grid and random hyperparameter search over [`TrainConfig`] spaces, scored
//! on a validation split or by k-fold cross-validation.
//!
//! Every cell trains with the base seed, so two cells differ only in the
//! hyperparameters being searched.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::RatingDataset;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalConfig};
use crate::factor::TrainConfig;
use crate::model::Predictor;
use crate::rng::component_rng;
use crate::split::kfold;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TuneMetric {
    /// Lower is better.
    Rmse,
    /// Higher is better.
    Map,
}

impl TuneMetric {
    pub fn name(self) -> &'static str {
        match self {
            TuneMetric::Rmse => "rmse",
            TuneMetric::Map => "map",
        }
    }

    /// Strict improvement, so the earlier of two equal cells is kept.
    pub fn improves(self, candidate: f64, incumbent: f64) -> bool {
        match self {
            TuneMetric::Rmse => candidate < incumbent,
            TuneMetric::Map => candidate > incumbent,
        }
    }
}

/// Metric plus the evaluation settings used to compute it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub metric: TuneMetric,
    pub eval: EvalConfig,
}

impl Objective {
    pub fn rmse() -> Self {
        Self { metric: TuneMetric::Rmse, eval: EvalConfig::default() }
    }

    pub fn map() -> Self {
        Self { metric: TuneMetric::Map, eval: EvalConfig::default() }
    }
}

/// Validation score of a fitted model.
pub fn score_model(
    model: &dyn Predictor,
    train: &RatingDataset,
    validation: &RatingDataset,
    objective: &Objective,
) -> Result<f64> {
    let report = evaluate(model, train, validation, &objective.eval)?;
    let name = objective.metric.name();
    if report.degenerate.iter().any(|d| d == name) {
        return Err(Error::Value(format!("{name} is undefined on the validation set")));
    }
    Ok(match objective.metric {
        TuneMetric::Rmse => report.rmse,
        TuneMetric::Map => report.map,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperGrid {
    pub learning_rate: Vec<f64>,
    pub lambda: Vec<f64>,
    pub factors: Vec<usize>,
    pub epochs: Vec<usize>,
    pub batch_size: Vec<usize>,
}

impl HyperGrid {
    /// A one-cell grid holding `base`'s values.
    pub fn singleton(base: &TrainConfig) -> Self {
        Self {
            learning_rate: vec![base.learning_rate],
            lambda: vec![base.lambda],
            factors: vec![base.factors],
            epochs: vec![base.epochs],
            batch_size: vec![base.batch_size],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, len) in [
            ("learning_rate", self.learning_rate.len()),
            ("lambda", self.lambda.len()),
            ("factors", self.factors.len()),
            ("epochs", self.epochs.len()),
            ("batch_size", self.batch_size.len()),
        ] {
            if len == 0 {
                return Err(Error::InvalidConfig(format!("grid axis {name} is empty")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.learning_rate.len() * self.lambda.len() * self.factors.len() * self.epochs.len() * self.batch_size.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cartesian product in declaration order, last axis varying fastest.
    pub fn configs(&self, base: &TrainConfig) -> Vec<TrainConfig> {
        let mut out = Vec::with_capacity(self.len());
        for &learning_rate in &self.learning_rate {
            for &lambda in &self.lambda {
                for &factors in &self.factors {
                    for &epochs in &self.epochs {
                        for &batch_size in &self.batch_size {
                            out.push(TrainConfig { learning_rate, lambda, factors, epochs, batch_size, ..*base });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub config: TrainConfig,
    pub value: Option<f64>,
    /// Training or evaluation failure for this cell.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub metric: TuneMetric,
    pub trials: Vec<Trial>,
    /// Index into `trials`; `None` when every cell failed.
    pub best: Option<usize>,
}

impl TuneResult {
    fn from_trials(metric: TuneMetric, trials: Vec<Trial>) -> Self {
        let mut best: Option<(usize, f64)> = None;
        for (k, t) in trials.iter().enumerate() {
            if let Some(v) = t.value {
                if best.is_none_or(|(_, b)| metric.improves(v, b)) {
                    best = Some((k, v));
                }
            }
        }
        TuneResult { metric, trials, best: best.map(|b| b.0) }
    }

    pub fn best_config(&self) -> Option<&TrainConfig> {
        self.best.map(|b| &self.trials[b].config)
    }

    pub fn best_value(&self) -> Option<f64> {
        self.best.and_then(|b| self.trials[b].value)
    }

    /// One row per configuration.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(["trial", "learning_rate", "lambda", "factors", "epochs", "batch_size", self.metric.name(), "error"])
            .map_err(csv_err)?;
        for (k, t) in self.trials.iter().enumerate() {
            let c = &t.config;
            w.write_record([
                k.to_string(),
                c.learning_rate.to_string(),
                c.lambda.to_string(),
                c.factors.to_string(),
                c.epochs.to_string(),
                c.batch_size.to_string(),
                t.value.map(|v| v.to_string()).unwrap_or_default(),
                t.error.clone().unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Builds a model from training data and a configuration.
pub type ConfigTrainer<'a, P> = dyn Fn(&RatingDataset, &TrainConfig) -> Result<P> + Sync + 'a;

fn run_trials<P: Predictor>(
    trainer: &ConfigTrainer<'_, P>,
    configs: Vec<TrainConfig>,
    score: impl Fn(&ConfigTrainer<'_, P>, &TrainConfig) -> Result<f64> + Sync,
    metric: TuneMetric,
) -> TuneResult {
    let trials = configs
        .into_par_iter()
        .map(|config| match score(trainer, &config) {
            Ok(v) => Trial { config, value: Some(v), error: None },
            Err(e) => Trial { config, value: None, error: Some(e.to_string()) },
        })
        .collect();
    TuneResult::from_trials(metric, trials)
}

fn holdout_score<P: Predictor>(
    trainer: &ConfigTrainer<'_, P>,
    config: &TrainConfig,
    train: &RatingDataset,
    validation: &RatingDataset,
    objective: &Objective,
) -> Result<f64> {
    let model = trainer(train, config)?;
    score_model(&model, train, validation, objective)
}

/// Train and score every grid cell on `validation`.
pub fn grid_search<P: Predictor>(
    trainer: &ConfigTrainer<'_, P>,
    grid: &HyperGrid,
    base: &TrainConfig,
    train: &RatingDataset,
    validation: &RatingDataset,
    objective: &Objective,
) -> Result<TuneResult> {
    grid.validate()?;
    if validation.is_empty() {
        return Err(Error::EmptyInput);
    }
    let score = |t: &ConfigTrainer<'_, P>, c: &TrainConfig| holdout_score(t, c, train, validation, objective);
    Ok(run_trials(trainer, grid.configs(base), score, objective.metric))
}

/// Mean validation score over `folds` folds of `data`.
pub fn cross_validate<P: Predictor>(
    trainer: &ConfigTrainer<'_, P>,
    config: &TrainConfig,
    data: &RatingDataset,
    folds: usize,
    objective: &Objective,
) -> Result<f64> {
    let splits = kfold(data, folds, config.seed)?;
    let mut total = 0.0;
    for s in &splits {
        total += holdout_score(trainer, config, &s.train, &s.test, objective)?;
    }
    Ok(total / splits.len() as f64)
}

/// Grid search scored by k-fold cross-validation instead of a fixed split.
pub fn grid_search_cv<P: Predictor>(
    trainer: &ConfigTrainer<'_, P>,
    grid: &HyperGrid,
    base: &TrainConfig,
    data: &RatingDataset,
    folds: usize,
    objective: &Objective,
) -> Result<TuneResult> {
    grid.validate()?;
    if folds < 2 || folds > data.len() {
        return Err(Error::InvalidK(format!("{folds} folds for {} interactions", data.len())));
    }
    let score = |t: &ConfigTrainer<'_, P>, c: &TrainConfig| cross_validate(t, c, data, folds, objective);
    Ok(run_trials(trainer, grid.configs(base), score, objective.metric))
}

/// Inclusive per-axis ranges for random search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub learning_rate: (f64, f64),
    pub lambda: (f64, f64),
    pub factors: (usize, usize),
    pub epochs: (usize, usize),
    pub batch_size: (usize, usize),
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("learning_rate", self.learning_rate), ("lambda", self.lambda)] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} range must satisfy 0 < min <= max, got [{lo}, {hi}]")));
            }
        }
        for (name, (lo, hi)) in
            [("factors", self.factors), ("epochs", self.epochs), ("batch_size", self.batch_size)]
        {
            if lo == 0 || lo > hi {
                return Err(Error::InvalidConfig(format!("{name} range must satisfy 1 <= min <= max, got [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// `n` configurations drawn under `seed`: log-uniform for the learning
    /// rate and λ, uniform integers for the rest.
    pub fn sample(&self, base: &TrainConfig, n: usize, seed: u64) -> Vec<TrainConfig> {
        let mut rng = component_rng(seed, "tune.random");
        let log_uniform = |(lo, hi): (f64, f64), rng: &mut crate::rng::Rng| {
            if lo == hi {
                lo
            } else {
                rng.random_range(lo.ln()..=hi.ln()).exp().clamp(lo, hi)
            }
        };
        (0..n)
            .map(|_| {
                let learning_rate = log_uniform(self.learning_rate, &mut rng);
                let lambda = log_uniform(self.lambda, &mut rng);
                TrainConfig {
                    learning_rate,
                    lambda,
                    factors: rng.random_range(self.factors.0..=self.factors.1),
                    epochs: rng.random_range(self.epochs.0..=self.epochs.1),
                    batch_size: rng.random_range(self.batch_size.0..=self.batch_size.1),
                    ..*base
                }
            })
            .collect()
    }
}

#[allow(clippy::too_many_arguments)]
pub fn random_search<P: Predictor>(
    trainer: &ConfigTrainer<'_, P>,
    space: &SearchSpace,
    base: &TrainConfig,
    n_trials: usize,
    seed: u64,
    train: &RatingDataset,
    validation: &RatingDataset,
    objective: &Objective,
) -> Result<TuneResult> {
    space.validate()?;
    if n_trials == 0 {
        return Err(Error::InvalidConfig("n_trials must be at least 1".into()));
    }
    if validation.is_empty() {
        return Err(Error::EmptyInput);
    }
    let score = |t: &ConfigTrainer<'_, P>, c: &TrainConfig| holdout_score(t, c, train, validation, objective);
    Ok(run_trials(trainer, space.sample(base, n_trials, seed), score, objective.metric))
}

//! Model combination: weighted averaging, bagging, boosting, stacking and
//! the weighted CF/CBF hybrid.
//!
//! Averages are written in anchored form p_a + Σ w_k (p_k − p_a), equal to
//! Σ w_k p_k whenever the weights sum to one, with the anchor `a` the
//! heaviest member. Members that agree then reproduce their common
//! prediction bit for bit, and one-hot weights return the chosen member.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{RatingDataset, RatingScale};
use crate::error::{Error, Result};
use crate::factor::{mf_fit_observations, MfModel, TrainConfig};
use crate::linalg::solve_general;
use crate::model::Predictor;
use crate::rng::{derive_indexed, derive_seed, rng_from};
use crate::split::fold_assignment;

const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Σ w_k·p_k for weights that already sum to one.
pub fn weighted_combine(predictions: &[f64], weights: &[f64]) -> Result<f64> {
    if predictions.len() != weights.len() {
        return Err(Error::Dimension { expected: weights.len(), got: predictions.len() });
    }
    if predictions.is_empty() {
        return Err(Error::EmptyInput);
    }
    let sum: f64 = weights.iter().sum();
    if !weights.iter().all(|w| w.is_finite()) || (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::InvalidConfig(format!("weights must be finite and sum to 1, got sum {sum}")));
    }
    Ok(anchored(predictions, weights))
}

/// p_a + Σ w_k (p_k − p_a) with `a` the first member of largest weight.
fn anchored(predictions: &[f64], weights: &[f64]) -> f64 {
    let a = (0..weights.len()).fold(0, |best, k| if weights[k] > weights[best] { k } else { best });
    let pa = predictions[a];
    pa + predictions.iter().zip(weights).map(|(p, w)| w * (p - pa)).sum::<f64>()
}

/// Scale non-negative weights to sum to one.
pub fn normalize_weights(weights: &[f64]) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return Err(Error::EmptyInput);
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidConfig("weights must be finite and non-negative".into()));
    }
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return Err(Error::InvalidConfig("weights must not all be zero".into()));
    }
    Ok(weights.iter().map(|w| w / sum).collect())
}

/// Weights proportional to 1/RMSE. Members with zero validation error share
/// all the weight.
pub fn inverse_rmse_weights(rmses: &[f64]) -> Result<Vec<f64>> {
    if rmses.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::Value("validation RMSE values must be finite and non-negative".into()));
    }
    if rmses.contains(&0.0) {
        return normalize_weights(&rmses.iter().map(|&r| if r == 0.0 { 1.0 } else { 0.0 }).collect::<Vec<_>>());
    }
    normalize_weights(&rmses.iter().map(|r| 1.0 / r).collect::<Vec<_>>())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedEnsemble<M> {
    pub members: Vec<M>,
    pub weights: Vec<f64>,
}

impl<M: Predictor> WeightedEnsemble<M> {
    /// Weights are normalised here, so any positive rescaling gives the same ensemble.
    pub fn new(members: Vec<M>, weights: &[f64]) -> Result<Self> {
        if members.len() != weights.len() {
            return Err(Error::Dimension { expected: members.len(), got: weights.len() });
        }
        Ok(Self { members, weights: normalize_weights(weights)? })
    }
}

impl<M: Predictor> Predictor for WeightedEnsemble<M> {
    fn predict(&self, user: usize, item: usize) -> Result<f64> {
        self.predict_at(user, item, None)
    }

    fn predict_at(&self, user: usize, item: usize, timestamp: Option<i64>) -> Result<f64> {
        let preds = self
            .members
            .iter()
            .enumerate()
            .map(|(k, m)| m.predict_at(user, item, timestamp).map_err(Error::member(k)))
            .collect::<Result<Vec<_>>>()?;
        weighted_combine(&preds, &self.weights)
    }
}

/// Mean of member predictions, skipping members that report cold start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaggingEnsemble {
    pub members: Vec<MfModel>,
}

/// Positions of a size-`n` bootstrap resample (uniform, with replacement) for member `member`.
pub fn bootstrap_indices(n: usize, seed: u64, member: usize) -> Vec<usize> {
    let mut rng = rng_from(derive_indexed(seed, "bagging.resample", member as u64));
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Train `n` MF members on bootstrap resamples of `train`.
pub fn bagging_fit(train: &RatingDataset, base: &TrainConfig, n: usize, seed: u64) -> Result<BaggingEnsemble> {
    if n == 0 {
        return Err(Error::InvalidConfig("bagging needs at least one member".into()));
    }
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let resamples: Vec<Vec<usize>> = (0..n).map(|k| bootstrap_indices(train.len(), seed, k)).collect();
    bagging_fit_resamples(train, base, &resamples, seed)
}

/// Train one MF member per explicit resample (positions into `train`).
pub fn bagging_fit_resamples(
    train: &RatingDataset,
    base: &TrainConfig,
    resamples: &[Vec<usize>],
    seed: u64,
) -> Result<BaggingEnsemble> {
    let triplets: Vec<(usize, usize, f64)> = train.triplets().collect();
    let members = resamples
        .par_iter()
        .enumerate()
        .map(|(k, positions)| {
            let obs: Vec<_> = positions.iter().map(|&p| triplets[p]).collect();
            let config = TrainConfig { seed: derive_indexed(seed, "bagging.member", k as u64), ..*base };
            mf_fit_observations(train.n_users(), train.n_items(), &obs, train.scale(), &config).map_err(Error::member(k))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BaggingEnsemble { members })
}

impl Predictor for BaggingEnsemble {
    fn predict(&self, user: usize, item: usize) -> Result<f64> {
        let mut preds = Vec::with_capacity(self.members.len());
        for (k, m) in self.members.iter().enumerate() {
            match m.predict(user, item) {
                Ok(p) => preds.push(p),
                Err(e) if e.is_cold_start() => {}
                Err(e) => return Err(Error::member(k)(e)),
            }
        }
        let Some(&p0) = preds.first() else {
            return Err(Error::ColdStart(format!("no bagging member knows user {user} and item {item}")));
        };
        let n = preds.len() as f64;
        Ok(p0 + preds.iter().map(|p| (p - p0) / n).sum::<f64>())
    }
}

/// Stagewise residual fitting: F₀ = global mean, F_k = F_{k−1} + α·h_k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostingEnsemble {
    pub base_value: f64,
    pub shrinkage: f64,
    pub stages: Vec<MfModel>,
    pub scale: RatingScale,
    /// Training RMSE of stage 0 and after every round.
    pub train_rmse: Vec<f64>,
}

impl BoostingEnsemble {
    /// Unclamped ensemble score.
    pub fn raw_score(&self, user: usize, item: usize) -> f64 {
        self.base_value + self.stages.iter().map(|h| self.shrinkage * h.raw_score(user, item)).sum::<f64>()
    }
}

pub fn boosting_fit(train: &RatingDataset, base: &TrainConfig, rounds: usize, shrinkage: f64) -> Result<BoostingEnsemble> {
    if rounds == 0 {
        return Err(Error::InvalidConfig("boosting needs at least one round".into()));
    }
    if !(shrinkage > 0.0 && shrinkage <= 1.0) {
        return Err(Error::InvalidConfig(format!("shrinkage must lie in (0, 1], got {shrinkage}")));
    }
    let obs: Vec<(usize, usize, f64)> = train.triplets().collect();
    if obs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let base_value = obs.iter().map(|x| x.2).sum::<f64>() / obs.len() as f64;
    let mut fitted = vec![base_value; obs.len()];
    let train_rmse_of = |fitted: &[f64]| {
        (obs.iter().zip(fitted).map(|(x, f)| (x.2 - f) * (x.2 - f)).sum::<f64>() / obs.len() as f64).sqrt()
    };
    let mut ensemble = BoostingEnsemble {
        base_value,
        shrinkage,
        stages: Vec::with_capacity(rounds),
        scale: train.scale(),
        train_rmse: vec![train_rmse_of(&fitted)],
    };
    for k in 0..rounds {
        let residuals: Vec<_> = obs.iter().zip(&fitted).map(|(&(u, i, r), f)| (u, i, r - f)).collect();
        let config = TrainConfig { seed: derive_indexed(base.seed, "boosting.stage", k as u64), ..*base };
        let stage = mf_fit_observations(train.n_users(), train.n_items(), &residuals, RatingScale::unbounded(), &config)
            .map_err(Error::member(k))?;
        for (f, &(u, i, _)) in fitted.iter_mut().zip(&obs) {
            *f += shrinkage * stage.raw_score(u, i);
        }
        ensemble.stages.push(stage);
        ensemble.train_rmse.push(train_rmse_of(&fitted));
    }
    Ok(ensemble)
}

impl Predictor for BoostingEnsemble {
    fn predict(&self, user: usize, item: usize) -> Result<f64> {
        if let Some(first) = self.stages.first() {
            first.predict(user, item)?;
        }
        Ok(self.scale.clamp(self.raw_score(user, item)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StackingConfig {
    pub folds: usize,
    /// Ridge strength on the mean-squared-error scale, pulling meta-weights toward uniform.
    pub meta_lambda: f64,
    pub seed: u64,
}

impl Default for StackingConfig {
    fn default() -> Self {
        Self { folds: 5, meta_lambda: 1e-8, seed: 42 }
    }
}

/// A function that trains one base model on a dataset.
pub type Trainer<'a, M> = dyn Fn(&RatingDataset) -> Result<M> + Sync + 'a;

/// Out-of-fold base predictions: row `p` of the training data is scored by
/// models that were trained without fold `fold_of[p]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutOfFold {
    pub fold_of: Vec<usize>,
    /// `predictions[p][k]`: member `k`'s prediction for row `p`, `None` on cold start.
    pub predictions: Vec<Vec<Option<f64>>>,
}

pub fn out_of_fold_predictions<M: Predictor>(
    train: &RatingDataset,
    trainers: &[&Trainer<'_, M>],
    folds: usize,
    seed: u64,
) -> Result<OutOfFold> {
    let fold_of = fold_assignment(train.len(), folds, derive_seed(seed, "stacking.folds"))?;
    let mut predictions = vec![vec![None; trainers.len()]; train.len()];
    let per_fold: Vec<Vec<(usize, usize, Option<f64>)>> = (0..folds)
        .into_par_iter()
        .map(|f| {
            let (held, kept): (Vec<usize>, Vec<usize>) = (0..train.len()).partition(|&p| fold_of[p] == f);
            let complement = train.subset(&kept);
            let mut out = Vec::with_capacity(held.len() * trainers.len());
            for (k, trainer) in trainers.iter().enumerate() {
                let model = trainer(&complement).map_err(Error::member(k))?;
                for &p in &held {
                    let (u, i) = train.dense_pairs()[p];
                    let ts = train.interactions()[p].timestamp;
                    match model.predict_at(u, i, Some(ts)) {
                        Ok(v) => out.push((p, k, Some(v))),
                        Err(e) if e.is_cold_start() => out.push((p, k, None)),
                        Err(e) => return Err(Error::member(k)(e)),
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    for (p, k, v) in per_fold.into_iter().flatten() {
        predictions[p][k] = v;
    }
    Ok(OutOfFold { fold_of, predictions })
}

/// Meta-weights β minimising (1/n)‖y − Zβ‖² + λ‖β − 1/m‖² subject to Σβ = 1,
/// via the KKT system. Collinear columns with λ = 0 give `SingularSystem`.
pub fn fit_meta_weights(features: &[Vec<f64>], targets: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if targets.is_empty() {
        return Err(Error::EmptyInput);
    }
    if features.len() != targets.len() {
        return Err(Error::Dimension { expected: targets.len(), got: features.len() });
    }
    let m = features[0].len();
    if m == 0 {
        return Err(Error::EmptyInput);
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidConfig(format!("meta_lambda must be >= 0, got {lambda}")));
    }
    let n = targets.len() as f64;
    let dim = m + 1;
    let mut a = vec![0.0; dim * dim];
    let mut b = vec![0.0; dim];
    for (z, &y) in features.iter().zip(targets) {
        if z.len() != m {
            return Err(Error::Dimension { expected: m, got: z.len() });
        }
        for r in 0..m {
            b[r] += z[r] * y / n;
            for c in 0..m {
                a[r * dim + c] += z[r] * z[c] / n;
            }
        }
    }
    let uniform = 1.0 / m as f64;
    for r in 0..m {
        a[r * dim + r] += lambda;
        b[r] += lambda * uniform;
        a[r * dim + m] = 1.0;
        a[m * dim + r] = 1.0;
    }
    b[m] = 1.0;
    let mut x = solve_general(&a, &b)?;
    x.truncate(m);
    Ok(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackingEnsemble<M> {
    /// Base models retrained on the full training data.
    pub members: Vec<M>,
    pub meta_weights: Vec<f64>,
    pub scale: RatingScale,
    /// Rows used to fit the meta-model (those every member could score out of fold).
    pub meta_rows: usize,
}

/// Fit base models on fold complements, learn the meta-model on their
/// out-of-fold predictions, then refit every base model on all of `train`.
pub fn stacking_fit<M: Predictor>(
    train: &RatingDataset,
    trainers: &[&Trainer<'_, M>],
    config: &StackingConfig,
) -> Result<StackingEnsemble<M>> {
    if trainers.len() < 2 {
        return Err(Error::InvalidConfig("stacking needs at least two base models".into()));
    }
    let oof = out_of_fold_predictions(train, trainers, config.folds, config.seed)?;
    let mut features = Vec::new();
    let mut targets = Vec::new();
    for (row, x) in oof.predictions.iter().zip(train.interactions()) {
        if let Some(z) = row.iter().copied().collect::<Option<Vec<f64>>>() {
            features.push(z);
            targets.push(x.rating);
        }
    }
    if features.is_empty() {
        return Err(Error::ColdStart("no training row could be scored out of fold by every member".into()));
    }
    let meta_weights = fit_meta_weights(&features, &targets, config.meta_lambda)?;
    let members = trainers
        .par_iter()
        .enumerate()
        .map(|(k, t)| t(train).map_err(Error::member(k)))
        .collect::<Result<Vec<M>>>()?;
    Ok(StackingEnsemble { members, meta_weights, scale: train.scale(), meta_rows: features.len() })
}

impl<M: Predictor> Predictor for StackingEnsemble<M> {
    fn predict(&self, user: usize, item: usize) -> Result<f64> {
        self.predict_at(user, item, None)
    }

    fn predict_at(&self, user: usize, item: usize, timestamp: Option<i64>) -> Result<f64> {
        let preds = self
            .members
            .iter()
            .enumerate()
            .map(|(k, m)| m.predict_at(user, item, timestamp).map_err(Error::member(k)))
            .collect::<Result<Vec<_>>>()?;
        let v = anchored(&preds, &self.meta_weights);
        Ok(self.scale.clamp(v))
    }
}

/// β·cf + (1 − β)·cbf.
pub fn hybrid_weighted(cf: f64, cbf: f64, beta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidConfig(format!("hybrid beta must lie in [0, 1], got {beta}")));
    }
    Ok(cbf + beta * (cf - cbf))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridModel<C, B> {
    pub cf: C,
    pub cbf: B,
    pub beta: f64,
}

impl<C: Predictor, B: Predictor> HybridModel<C, B> {
    pub fn new(cf: C, cbf: B, beta: f64) -> Result<Self> {
        hybrid_weighted(0.0, 0.0, beta)?;
        Ok(Self { cf, cbf, beta })
    }
}

impl<C: Predictor, B: Predictor> Predictor for HybridModel<C, B> {
    fn predict(&self, user: usize, item: usize) -> Result<f64> {
        self.predict_at(user, item, None)
    }

    fn predict_at(&self, user: usize, item: usize, timestamp: Option<i64>) -> Result<f64> {
        let cf = self.cf.predict_at(user, item, timestamp)?;
        let cbf = self.cbf.predict_at(user, item, timestamp)?;
        hybrid_weighted(cf, cbf, self.beta)
    }
}

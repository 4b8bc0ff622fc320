//! Linear rating model r̂ = w₀ + Σ w_k F_k, fitted by ridge regression with
//! an unpenalised intercept.

use serde::{Deserialize, Serialize};

use crate::data::{RatingDataset, RatingScale};
use crate::error::{Error, Result};
use crate::linalg::{dot, solve_spd};
use crate::model::Predictor;

/// Feature names used by [`linear_fit_dataset`].
pub const DEFAULT_SCHEMA: [&str; 4] = ["user_mean", "item_mean", "user_count", "item_count"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub w0: f64,
    pub weights: Vec<f64>,
    pub schema: Vec<String>,
    pub lambda: f64,
    pub scale: RatingScale,
}

/// Solve min Σ(y − w₀ − w·x)² + λ‖w‖² through the centered normal equations.
pub fn linear_fit(
    features: &[Vec<f64>],
    targets: &[f64],
    schema: Vec<String>,
    lambda: f64,
    scale: RatingScale,
) -> Result<LinearModel> {
    if targets.is_empty() {
        return Err(Error::EmptyInput);
    }
    if features.len() != targets.len() {
        return Err(Error::Dimension { expected: targets.len(), got: features.len() });
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {lambda}")));
    }
    let p = schema.len();
    if let Some(bad) = features.iter().find(|x| x.len() != p) {
        return Err(Error::Dimension { expected: p, got: bad.len() });
    }
    let n = targets.len() as f64;
    let y_mean = targets.iter().sum::<f64>() / n;
    let x_mean: Vec<f64> = (0..p).map(|k| features.iter().map(|x| x[k]).sum::<f64>() / n).collect();
    let weights = if p == 0 {
        Vec::new()
    } else {
        let mut a = vec![0.0; p * p];
        let mut b = vec![0.0; p];
        let mut xc = vec![0.0; p];
        for (x, &y) in features.iter().zip(targets) {
            for k in 0..p {
                xc[k] = x[k] - x_mean[k];
            }
            let yc = y - y_mean;
            for r in 0..p {
                b[r] += xc[r] * yc;
                for c in 0..p {
                    a[r * p + c] += xc[r] * xc[c];
                }
            }
        }
        for k in 0..p {
            a[k * p + k] += lambda;
        }
        solve_spd(&a, &b)?
    };
    let w0 = y_mean - dot(&x_mean, &weights);
    Ok(LinearModel { w0, weights, schema, lambda, scale })
}

pub fn linear_predict(model: &LinearModel, features: &[f64]) -> Result<f64> {
    if features.len() != model.weights.len() {
        return Err(Error::Dimension { expected: model.weights.len(), got: features.len() });
    }
    Ok(model.scale.clamp(model.w0 + dot(&model.weights, features)))
}

/// Linear model over per-user and per-item training statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRecommender {
    pub model: LinearModel,
    user_stats: Vec<(f64, f64)>,
    item_stats: Vec<(f64, f64)>,
}

fn entity_stats(n: usize, pairs: impl Iterator<Item = (usize, f64)>) -> Vec<(f64, f64)> {
    let mut acc = vec![(0.0, 0.0); n];
    for (e, r) in pairs {
        acc[e].0 += r;
        acc[e].1 += 1.0;
    }
    acc.into_iter().map(|(s, c)| if c > 0.0 { (s / c, c) } else { (0.0, 0.0) }).collect()
}

impl LinearRecommender {
    /// (user mean, item mean, user count, item count) for a known pair.
    pub fn features(&self, user: usize, item: usize) -> Result<[f64; 4]> {
        let &(um, uc) = self.user_stats.get(user).filter(|s| s.1 > 0.0).ok_or_else(|| Error::cold_user(user))?;
        let &(im, ic) = self.item_stats.get(item).filter(|s| s.1 > 0.0).ok_or_else(|| Error::cold_item(item))?;
        Ok([um, im, uc, ic])
    }
}

pub fn linear_fit_dataset(train: &RatingDataset, lambda: f64) -> Result<LinearRecommender> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let user_stats = entity_stats(train.n_users(), train.triplets().map(|(u, _, r)| (u, r)));
    let item_stats = entity_stats(train.n_items(), train.triplets().map(|(_, i, r)| (i, r)));
    let mut rec = LinearRecommender {
        model: LinearModel { w0: 0.0, weights: vec![], schema: vec![], lambda, scale: train.scale() },
        user_stats,
        item_stats,
    };
    let mut xs = Vec::with_capacity(train.len());
    let mut ys = Vec::with_capacity(train.len());
    for (u, i, r) in train.triplets() {
        xs.push(rec.features(u, i)?.to_vec());
        ys.push(r);
    }
    let schema = DEFAULT_SCHEMA.iter().map(|s| s.to_string()).collect();
    rec.model = linear_fit(&xs, &ys, schema, lambda, train.scale())?;
    Ok(rec)
}

impl Predictor for LinearRecommender {
    fn predict(&self, user: usize, item: usize) -> Result<f64> {
        linear_predict(&self.model, &self.features(user, item)?)
    }
}

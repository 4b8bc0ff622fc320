//! Matrix factorization R ≈ UVᵀ trained on the regularized squared error
//! Σ (R_ui − μ − U_u·V_i)² + λ(‖U‖² + ‖V‖²), where μ is the centering offset.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{check_divergence, Centering, Optimizer, TrainConfig};
use crate::data::{RatingDataset, RatingScale, SparseRatingMatrix};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm_sq, solve_least_squares, solve_spd};
use crate::model::Predictor;
use crate::rng::{component_rng, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfModel {
    pub n_users: usize,
    pub n_items: usize,
    pub k: usize,
    pub lambda: f64,
    /// Row-major `n_users × k`.
    pub user_factors: Vec<f64>,
    /// Row-major `n_items × k`.
    pub item_factors: Vec<f64>,
    pub offset: f64,
    pub scale: RatingScale,
    pub user_known: Vec<bool>,
    pub item_known: Vec<bool>,
    /// Full objective before training and after every epoch.
    pub loss_history: Vec<f64>,
    /// ALS only: full objective after every half-step, starting from the initial value.
    pub half_step_history: Vec<f64>,
}

impl MfModel {
    /// A model from explicit factor rows; every row counts as observed.
    pub fn from_factors(
        user_factors: &[Vec<f64>],
        item_factors: &[Vec<f64>],
        lambda: f64,
        offset: f64,
        scale: RatingScale,
    ) -> Result<Self> {
        let k = user_factors.first().or(item_factors.first()).map_or(0, Vec::len);
        if k == 0 {
            return Err(Error::InvalidK("factor rows must be non-empty".into()));
        }
        for row in user_factors.iter().chain(item_factors) {
            if row.len() != k {
                return Err(Error::Dimension { expected: k, got: row.len() });
            }
        }
        Ok(Self {
            n_users: user_factors.len(),
            n_items: item_factors.len(),
            k,
            lambda,
            user_factors: user_factors.concat(),
            item_factors: item_factors.concat(),
            offset,
            scale,
            user_known: vec![true; user_factors.len()],
            item_known: vec![true; item_factors.len()],
            loss_history: Vec::new(),
            half_step_history: Vec::new(),
        })
    }

    pub fn user_row(&self, u: usize) -> &[f64] {
        &self.user_factors[u * self.k..(u + 1) * self.k]
    }

    pub fn item_row(&self, i: usize) -> &[f64] {
        &self.item_factors[i * self.k..(i + 1) * self.k]
    }

    /// Unclamped `μ + U_u·V_i`.
    pub fn raw_score(&self, u: usize, i: usize) -> f64 {
        self.offset + dot(self.user_row(u), self.item_row(i))
    }

    /// Full objective over `observations` of (user, item, rating).
    pub fn objective(&self, observations: &[(usize, usize, f64)]) -> f64 {
        let sse: f64 = observations
            .iter()
            .map(|&(u, i, r)| {
                let e = r - self.raw_score(u, i);
                e * e
            })
            .sum();
        sse + self.lambda * (norm_sq(&self.user_factors) + norm_sq(&self.item_factors))
    }

    /// Gradient of [`objective`](Self::objective) with respect to U and V.
    pub fn gradient(&self, observations: &[(usize, usize, f64)]) -> (Vec<f64>, Vec<f64>) {
        let k = self.k;
        let mut gu: Vec<f64> = self.user_factors.iter().map(|x| 2.0 * self.lambda * x).collect();
        let mut gv: Vec<f64> = self.item_factors.iter().map(|x| 2.0 * self.lambda * x).collect();
        for &(u, i, r) in observations {
            let e = r - self.raw_score(u, i);
            for f in 0..k {
                gu[u * k + f] -= 2.0 * e * self.item_factors[i * k + f];
                gv[i * k + f] -= 2.0 * e * self.user_factors[u * k + f];
            }
        }
        (gu, gv)
    }

    fn check_dims(&self, train: &SparseRatingMatrix) -> Result<()> {
        if train.n_users() != self.n_users {
            return Err(Error::Dimension { expected: self.n_users, got: train.n_users() });
        }
        if train.n_items() != self.n_items {
            return Err(Error::Dimension { expected: self.n_items, got: train.n_items() });
        }
        Ok(())
    }
}

/// The training objective of `model` on `train`.
pub fn mf_loss(model: &MfModel, train: &SparseRatingMatrix) -> Result<f64> {
    model.check_dims(train)?;
    Ok(model.objective(&train.flatten()))
}

/// Analytic gradient of [`mf_loss`], as (∂/∂U, ∂/∂V) in row-major layout.
pub fn mf_gradient(model: &MfModel, train: &SparseRatingMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
    model.check_dims(train)?;
    Ok(model.gradient(&train.flatten()))
}

pub fn mf_fit(train: &RatingDataset, config: &TrainConfig) -> Result<MfModel> {
    let triplets: Vec<_> = train.triplets().collect();
    mf_fit_observations(train.n_users(), train.n_items(), &triplets, train.scale(), config)
}

pub fn mf_fit_matrix(train: &SparseRatingMatrix, scale: RatingScale, config: &TrainConfig) -> Result<MfModel> {
    mf_fit_observations(train.n_users(), train.n_items(), &train.flatten(), scale, config)
}

/// Fit on raw (user, item, rating) observations over `n_users × n_items`.
pub fn mf_fit_observations(
    n_users: usize,
    n_items: usize,
    observations: &[(usize, usize, f64)],
    scale: RatingScale,
    config: &TrainConfig,
) -> Result<MfModel> {
    config.validate()?;
    if observations.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut user_count = vec![0usize; n_users];
    let mut item_count = vec![0usize; n_items];
    for &(u, i, _) in observations {
        if u >= n_users {
            return Err(Error::Dimension { expected: n_users, got: u + 1 });
        }
        if i >= n_items {
            return Err(Error::Dimension { expected: n_items, got: i + 1 });
        }
        user_count[u] += 1;
        item_count[i] += 1;
    }
    let offset = match config.centering {
        Centering::None => 0.0,
        Centering::GlobalMean => observations.iter().map(|x| x.2).sum::<f64>() / observations.len() as f64,
    };

    let k = config.factors;
    let mut init = component_rng(config.seed, "mf.init");
    let normal = Normal::new(0.0, config.init_std()).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut draw = |counts: &[usize]| -> Vec<f64> {
        let mut out = vec![0.0; counts.len() * k];
        for (row, &c) in out.chunks_mut(k).zip(counts) {
            if c > 0 {
                row.iter_mut().for_each(|x| *x = normal.sample(&mut init));
            }
        }
        out
    };
    let user_factors = draw(&user_count);
    let item_factors = draw(&item_count);

    let mut model = MfModel {
        n_users,
        n_items,
        k,
        lambda: config.lambda,
        user_factors,
        item_factors,
        offset,
        scale,
        user_known: user_count.iter().map(|&c| c > 0).collect(),
        item_known: item_count.iter().map(|&c| c > 0).collect(),
        loss_history: Vec::new(),
        half_step_history: Vec::new(),
    };
    let initial = model.objective(observations);
    model.loss_history.push(initial);
    match config.optimizer {
        Optimizer::Sgd => train_sgd(&mut model, observations, &user_count, &item_count, config, initial)?,
        Optimizer::Als => train_als(&mut model, observations, config, initial)?,
    }
    Ok(model)
}

fn train_sgd(
    model: &mut MfModel,
    observations: &[(usize, usize, f64)],
    user_count: &[usize],
    item_count: &[usize],
    config: &TrainConfig,
    initial: f64,
) -> Result<()> {
    let k = model.k;
    let lambda = model.lambda;
    let mut order: Vec<usize> = (0..observations.len()).collect();
    let mut rng: Rng = component_rng(config.seed, "mf.sgd");
    let mut gu = vec![0.0; k];
    let mut gv = vec![0.0; k];
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let step = config.learning_rate / batch.len() as f64;
            if batch.len() == 1 {
                let (u, i, r) = observations[batch[0]];
                sgd_gradient(model, u, i, r, user_count, item_count, lambda, &mut gu, &mut gv);
                apply(model, u, i, step, &gu, &gv);
                continue;
            }
            // Mini-batch: every gradient is taken at the parameters the batch started from.
            let grads: Vec<(usize, usize, Vec<f64>, Vec<f64>)> = batch
                .iter()
                .map(|&p| {
                    let (u, i, r) = observations[p];
                    let (mut a, mut b) = (vec![0.0; k], vec![0.0; k]);
                    sgd_gradient(model, u, i, r, user_count, item_count, lambda, &mut a, &mut b);
                    (u, i, a, b)
                })
                .collect();
            for (u, i, a, b) in &grads {
                apply(model, *u, *i, step, a, b);
            }
        }
        let loss = model.objective(observations);
        check_divergence(epoch, loss, initial)?;
        model.loss_history.push(loss);
    }
    Ok(())
}

/// Gradient of e² + λ(‖U_u‖²/n_u + ‖V_i‖²/n_i). Summed over one epoch these
/// per-observation terms add up to exactly the full objective.
#[allow(clippy::too_many_arguments)]
fn sgd_gradient(
    model: &MfModel,
    u: usize,
    i: usize,
    r: f64,
    user_count: &[usize],
    item_count: &[usize],
    lambda: f64,
    gu: &mut [f64],
    gv: &mut [f64],
) {
    let e = r - model.raw_score(u, i);
    let (pu, qi) = (model.user_row(u), model.item_row(i));
    let ru = lambda / user_count[u] as f64;
    let ri = lambda / item_count[i] as f64;
    for f in 0..model.k {
        gu[f] = -2.0 * e * qi[f] + 2.0 * ru * pu[f];
        gv[f] = -2.0 * e * pu[f] + 2.0 * ri * qi[f];
    }
}

fn apply(model: &mut MfModel, u: usize, i: usize, step: f64, gu: &[f64], gv: &[f64]) {
    let k = model.k;
    for f in 0..k {
        model.user_factors[u * k + f] -= step * gu[f];
        model.item_factors[i * k + f] -= step * gv[f];
    }
}

fn train_als(model: &mut MfModel, observations: &[(usize, usize, f64)], config: &TrainConfig, initial: f64) -> Result<()> {
    let mut by_user: Vec<Vec<(usize, f64)>> = vec![Vec::new(); model.n_users];
    let mut by_item: Vec<Vec<(usize, f64)>> = vec![Vec::new(); model.n_items];
    for &(u, i, r) in observations {
        by_user[u].push((i, r - model.offset));
        by_item[i].push((u, r - model.offset));
    }
    model.half_step_history.push(initial);
    for epoch in 1..=config.epochs {
        let (k, lambda) = (model.k, model.lambda);
        ridge_rows(&mut model.user_factors, &model.item_factors, &by_user, k, lambda);
        model.half_step_history.push(model.objective(observations));
        ridge_rows(&mut model.item_factors, &model.user_factors, &by_item, k, lambda);
        let loss = model.objective(observations);
        model.half_step_history.push(loss);
        check_divergence(epoch, loss, initial)?;
        model.loss_history.push(loss);
    }
    Ok(())
}

/// Replace every row of `target` with the exact minimiser of its ridge
/// subproblem given the fixed factors `other`.
fn ridge_rows(target: &mut [f64], other: &[f64], rows: &[Vec<(usize, f64)>], k: usize, lambda: f64) {
    target.par_chunks_mut(k).zip(rows.par_iter()).for_each(|(row, obs)| {
        if obs.is_empty() {
            row.iter_mut().for_each(|x| *x = 0.0);
            return;
        }
        let mut a = vec![0.0; k * k];
        let mut b = vec![0.0; k];
        for &(j, r) in obs {
            let q = &other[j * k..(j + 1) * k];
            for p in 0..k {
                b[p] += r * q[p];
                for s in 0..k {
                    a[p * k + s] += q[p] * q[s];
                }
            }
        }
        for p in 0..k {
            a[p * k + p] += lambda;
        }
        let x = solve_spd(&a, &b).unwrap_or_else(|_| solve_least_squares(&a, &b));
        row.copy_from_slice(&x);
    });
}

/// Clamped prediction for dense (user, item).
pub fn mf_predict(model: &MfModel, user: usize, item: usize) -> Result<f64> {
    if user >= model.n_users || !model.user_known[user] {
        return Err(Error::cold_user(user));
    }
    if item >= model.n_items || !model.item_known[item] {
        return Err(Error::cold_item(item));
    }
    Ok(model.scale.clamp(model.raw_score(user, item)))
}

impl Predictor for MfModel {
    fn predict(&self, user: usize, item: usize) -> Result<f64> {
        mf_predict(self, user, item)
    }
}

//! Factored SLIM: factor an item-item similarity matrix S ≈ WᵀH with L1
//! penalties, minimising ‖S − WᵀH‖²_F + λ(‖W‖₁ + ‖H‖₁).
//!
//! Unlike canonical SLIM (A ≈ AW with elastic net) this factorizes S
//! directly. Fitting is proximal gradient descent with backtracking, which
//! makes the objective sequence monotone.

use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{RatingScale, SparseRatingMatrix};
use crate::error::{Error, Result};
use crate::model::Predictor;
use crate::rng::component_rng;

/// Cosine similarity of the item columns of `matrix`, with unit diagonal for
/// items that have at least one rating.
pub fn compute_s(matrix: &SparseRatingMatrix) -> Result<DMatrix<f64>> {
    if matrix.nnz() == 0 {
        return Err(Error::EmptyDataset);
    }
    let n = matrix.n_items();
    let mut s = DMatrix::zeros(n, n);
    for u in 0..matrix.n_users() {
        let (items, vals) = matrix.row(u);
        for (p, (&a, &ra)) in items.iter().zip(vals).enumerate() {
            for (&b, &rb) in items[p + 1..].iter().zip(&vals[p + 1..]) {
                s[(a, b)] += ra * rb;
            }
        }
    }
    let norms: Vec<f64> = (0..n).map(|i| matrix.col(i).1.iter().map(|r| r * r).sum::<f64>().sqrt()).collect();
    for a in 0..n {
        if norms[a] > 0.0 {
            s[(a, a)] = 1.0;
        }
        for b in a + 1..n {
            let v = if norms[a] > 0.0 && norms[b] > 0.0 { s[(a, b)] / (norms[a] * norms[b]) } else { 0.0 };
            s[(a, b)] = v;
            s[(b, a)] = v;
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlimConfig {
    pub rank: usize,
    pub lambda: f64,
    pub max_iter: usize,
    /// Stop once an iteration improves the objective by less than `tol × max(1, F)`.
    pub tol: f64,
    pub seed: u64,
    /// Standard deviation of the initial factor entries.
    pub init_scale: f64,
}

impl Default for SlimConfig {
    fn default() -> Self {
        Self { rank: 16, lambda: 0.01, max_iter: 300, tol: 1e-10, seed: 42, init_scale: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlimModel {
    pub n_items: usize,
    pub rank: usize,
    pub lambda: f64,
    /// Row-major `rank × n_items`.
    pub w: Vec<f64>,
    /// Row-major `rank × n_items`.
    pub h: Vec<f64>,
    /// Objective before the first iteration and after each accepted step.
    pub objective_history: Vec<f64>,
}

impl SlimModel {
    /// Ŝ_ij = (WᵀH)_ij.
    pub fn s_hat(&self, i: usize, j: usize) -> f64 {
        (0..self.rank).map(|a| self.w[a * self.n_items + i] * self.h[a * self.n_items + j]).sum()
    }

    /// Fraction of exactly-zero entries in W and H.
    pub fn sparsity(&self) -> f64 {
        let zeros = self.w.iter().chain(&self.h).filter(|&&x| x == 0.0).count();
        zeros as f64 / (self.w.len() + self.h.len()) as f64
    }

    pub fn objective(&self, s: &DMatrix<f64>) -> f64 {
        let w = DMatrix::from_row_slice(self.rank, self.n_items, &self.w);
        let h = DMatrix::from_row_slice(self.rank, self.n_items, &self.h);
        objective(s, &w, &h, self.lambda)
    }
}

fn l1(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|x| x.abs()).sum()
}

fn objective(s: &DMatrix<f64>, w: &DMatrix<f64>, h: &DMatrix<f64>, lambda: f64) -> f64 {
    (s - w.transpose() * h).norm_squared() + lambda * (l1(w) + l1(h))
}

fn soft_threshold(m: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    m.map(|x| if x > t { x - t } else if x < -t { x + t } else { 0.0 })
}

pub fn slim_fit(s: &DMatrix<f64>, config: &SlimConfig) -> Result<SlimModel> {
    if !s.is_square() {
        return Err(Error::Dimension { expected: s.nrows(), got: s.ncols() });
    }
    if config.rank == 0 {
        return Err(Error::InvalidK("SLIM rank must be at least 1".into()));
    }
    if !(config.lambda >= 0.0) || !(config.tol >= 0.0) || !(config.init_scale > 0.0) {
        return Err(Error::InvalidConfig("SLIM lambda, tol must be >= 0 and init_scale > 0".into()));
    }
    let n = s.nrows();
    let r = config.rank;
    let normal = Normal::new(0.0, config.init_scale).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut rng = component_rng(config.seed, "slim.init");
    let mut w = DMatrix::from_fn(r, n, |_, _| normal.sample(&mut rng));
    let mut h = DMatrix::from_fn(r, n, |_, _| normal.sample(&mut rng));
    let lambda = config.lambda;

    let mut e = s - w.transpose() * &h;
    let mut f = e.norm_squared();
    let mut total = f + lambda * (l1(&w) + l1(&h));
    let mut history = vec![total];
    let mut step = 1.0 / (2.0 * (w.norm_squared() + h.norm_squared()).max(1e-12));
    for iter in 1..=config.max_iter {
        let gw = -2.0 * &h * e.transpose();
        let gh = -2.0 * &w * &e;
        step *= 2.0;
        let accepted = loop {
            let w_new = soft_threshold(&(&w - step * &gw), step * lambda);
            let h_new = soft_threshold(&(&h - step * &gh), step * lambda);
            let e_new = s - w_new.transpose() * &h_new;
            let f_new = e_new.norm_squared();
            let (dw, dh) = (&w_new - &w, &h_new - &h);
            let model = f + gw.dot(&dw) + gh.dot(&dh) + (dw.norm_squared() + dh.norm_squared()) / (2.0 * step);
            let total_new = f_new + lambda * (l1(&w_new) + l1(&h_new));
            if !total_new.is_finite() && step < 1e-300 {
                return Err(Error::Divergence { epoch: iter, loss: total_new });
            }
            if f_new <= model && total_new <= total {
                break Some((w_new, h_new, e_new, f_new, total_new));
            }
            step *= 0.5;
            if step < 1e-30 {
                break None;
            }
        };
        let Some((w_new, h_new, e_new, f_new, total_new)) = accepted else { break };
        let improvement = total - total_new;
        w = w_new;
        h = h_new;
        e = e_new;
        f = f_new;
        total = total_new;
        history.push(total);
        if improvement <= config.tol * total.max(1.0) {
            break;
        }
    }
    let row_major = |m: &DMatrix<f64>| -> Vec<f64> { m.transpose().iter().copied().collect() };
    Ok(SlimModel { n_items: n, rank: r, lambda, w: row_major(&w), h: row_major(&h), objective_history: history })
}

/// r̂_ui = Σ_j r_uj Ŝ_ij / Σ_j |Ŝ_ij| over the items j the user rated, or the
/// user's mean rating when that denominator is zero.
pub fn slim_predict(model: &SlimModel, matrix: &SparseRatingMatrix, user: usize, item: usize) -> Result<f64> {
    if user >= matrix.n_users() || matrix.row_len(user) == 0 {
        return Err(Error::cold_user(user));
    }
    if item >= model.n_items {
        return Err(Error::cold_item(item));
    }
    let (items, ratings) = matrix.row(user);
    let (mut num, mut den) = (0.0, 0.0);
    for (&j, &r) in items.iter().zip(ratings) {
        let s = model.s_hat(item, j);
        num += r * s;
        den += s.abs();
    }
    if den == 0.0 {
        return Ok(matrix.row_mean(user).expect("user has ratings"));
    }
    Ok(num / den)
}

/// A fitted SLIM model bound to the ratings it predicts from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlimRecommender {
    pub model: SlimModel,
    pub train: SparseRatingMatrix,
    pub scale: RatingScale,
}

impl Predictor for SlimRecommender {
    fn predict(&self, user: usize, item: usize) -> Result<f64> {
        if item >= self.train.n_items() || self.train.col_len(item) == 0 {
            return Err(Error::cold_item(item));
        }
        Ok(self.scale.clamp(slim_predict(&self.model, &self.train, user, item)?))
    }
}

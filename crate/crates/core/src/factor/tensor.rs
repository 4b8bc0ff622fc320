//! CP decomposition of the user × item × context rating tensor:
//! T_uic ≈ μ + Σ_k U[u,k]·V[i,k]·W[c,k], fitted by SGD on observed cells with
//! an optional L2 penalty λ(‖U‖² + ‖V‖² + ‖W‖²).

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::{check_divergence, Centering, TrainConfig};
use crate::data::{RatingDataset, RatingScale};
use crate::error::{Error, Result};
use crate::linalg::norm_sq;
use crate::model::Predictor;
use crate::rng::component_rng;

/// Default number of timestamp bins used as the context axis.
pub const DEFAULT_CONTEXT_BINS: usize = 8;

/// Equal-width bucketing of timestamps into `bins` contexts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextBinning {
    pub min: i64,
    pub max: i64,
    pub bins: usize,
}

impl ContextBinning {
    pub fn fit(timestamps: impl IntoIterator<Item = i64>, bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::InvalidK("context bin count must be at least 1".into()));
        }
        let (min, max) = timestamps
            .into_iter()
            .fold((i64::MAX, i64::MIN), |(lo, hi), t| (lo.min(t), hi.max(t)));
        if min > max {
            return Err(Error::EmptyInput);
        }
        Ok(Self { min, max, bins })
    }

    /// Bin index of `timestamp`; values outside the fitted range go to the end bins.
    pub fn bin(&self, timestamp: i64) -> usize {
        if timestamp <= self.min {
            return 0;
        }
        if timestamp >= self.max {
            return self.bins - 1;
        }
        let span = (self.max - self.min) as f64 + 1.0;
        let b = ((timestamp - self.min) as f64 / span * self.bins as f64).floor() as usize;
        b.min(self.bins - 1)
    }
}

/// One observed tensor cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContextRating {
    pub user: usize,
    pub item: usize,
    pub context: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorDims {
    pub n_users: usize,
    pub n_items: usize,
    pub n_contexts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorModel {
    pub dims: TensorDims,
    pub k: usize,
    pub lambda: f64,
    pub user_factors: Vec<f64>,
    pub item_factors: Vec<f64>,
    pub context_factors: Vec<f64>,
    pub offset: f64,
    pub scale: RatingScale,
    pub user_known: Vec<bool>,
    pub item_known: Vec<bool>,
    /// Present when contexts were derived from timestamps.
    pub binning: Option<ContextBinning>,
    pub loss_history: Vec<f64>,
}

/// Gradient of the tensor objective, one row-major block per factor matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorGradient {
    pub user: Vec<f64>,
    pub item: Vec<f64>,
    pub context: Vec<f64>,
}

impl TensorModel {
    /// A model from explicit factor rows; every user and item counts as observed.
    pub fn from_factors(
        users: &[Vec<f64>],
        items: &[Vec<f64>],
        contexts: &[Vec<f64>],
        lambda: f64,
        offset: f64,
        scale: RatingScale,
    ) -> Result<Self> {
        let k = users.first().map_or(0, Vec::len);
        if k == 0 {
            return Err(Error::InvalidK("K must be at least 1".into()));
        }
        for row in users.iter().chain(items).chain(contexts) {
            if row.len() != k {
                return Err(Error::Dimension { expected: k, got: row.len() });
            }
        }
        Ok(Self {
            dims: TensorDims { n_users: users.len(), n_items: items.len(), n_contexts: contexts.len() },
            k,
            lambda,
            user_factors: users.concat(),
            item_factors: items.concat(),
            context_factors: contexts.concat(),
            offset,
            scale,
            user_known: vec![true; users.len()],
            item_known: vec![true; items.len()],
            binning: None,
            loss_history: Vec::new(),
        })
    }

    fn rows(&self, u: usize, i: usize, c: usize) -> (&[f64], &[f64], &[f64]) {
        let k = self.k;
        (
            &self.user_factors[u * k..(u + 1) * k],
            &self.item_factors[i * k..(i + 1) * k],
            &self.context_factors[c * k..(c + 1) * k],
        )
    }

    /// Unclamped `μ + Σ_k U[u,k]·V[i,k]·W[c,k]`.
    pub fn raw_score(&self, u: usize, i: usize, c: usize) -> f64 {
        let (a, b, w) = self.rows(u, i, c);
        self.offset + (0..self.k).map(|f| a[f] * b[f] * w[f]).sum::<f64>()
    }

    pub fn objective(&self, cells: &[ContextRating]) -> f64 {
        let sse: f64 = cells
            .iter()
            .map(|x| {
                let e = x.value - self.raw_score(x.user, x.item, x.context);
                e * e
            })
            .sum();
        sse + self.lambda * (norm_sq(&self.user_factors) + norm_sq(&self.item_factors) + norm_sq(&self.context_factors))
    }

    pub fn gradient(&self, cells: &[ContextRating]) -> TensorGradient {
        let k = self.k;
        let scaled = |xs: &[f64]| xs.iter().map(|x| 2.0 * self.lambda * x).collect::<Vec<_>>();
        let mut g = TensorGradient {
            user: scaled(&self.user_factors),
            item: scaled(&self.item_factors),
            context: scaled(&self.context_factors),
        };
        for x in cells {
            let e = x.value - self.raw_score(x.user, x.item, x.context);
            let (a, b, w) = self.rows(x.user, x.item, x.context);
            for f in 0..k {
                g.user[x.user * k + f] -= 2.0 * e * b[f] * w[f];
                g.item[x.item * k + f] -= 2.0 * e * a[f] * w[f];
                g.context[x.context * k + f] -= 2.0 * e * a[f] * b[f];
            }
        }
        g
    }

    /// Mean prediction over all contexts, for callers that have no timestamp.
    fn context_free(&self, u: usize, i: usize) -> f64 {
        let n = self.dims.n_contexts.max(1) as f64;
        let (a, b, _) = self.rows(u, i, 0);
        let k = self.k;
        let mut s = 0.0;
        for f in 0..k {
            let w: f64 = (0..self.dims.n_contexts).map(|c| self.context_factors[c * k + f]).sum::<f64>() / n;
            s += a[f] * b[f] * w;
        }
        self.offset + s
    }

    fn check_known(&self, user: usize, item: usize) -> Result<()> {
        if user >= self.dims.n_users || !self.user_known[user] {
            return Err(Error::cold_user(user));
        }
        if item >= self.dims.n_items || !self.item_known[item] {
            return Err(Error::cold_item(item));
        }
        Ok(())
    }
}

/// Fit the CP model on explicit cells.
pub fn tf_fit(cells: &[ContextRating], dims: TensorDims, scale: RatingScale, config: &TrainConfig) -> Result<TensorModel> {
    config.validate()?;
    if cells.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut counts = [vec![0usize; dims.n_users], vec![0usize; dims.n_items], vec![0usize; dims.n_contexts]];
    for x in cells {
        for (axis, (idx, n)) in
            [(x.user, dims.n_users), (x.item, dims.n_items), (x.context, dims.n_contexts)].into_iter().enumerate()
        {
            if idx >= n {
                return Err(Error::Dimension { expected: n, got: idx + 1 });
            }
            counts[axis][idx] += 1;
        }
    }
    let offset = match config.centering {
        Centering::None => 0.0,
        Centering::GlobalMean => cells.iter().map(|x| x.value).sum::<f64>() / cells.len() as f64,
    };
    let k = config.factors;
    let normal = Normal::new(0.0, config.init_std()).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut init = component_rng(config.seed, "tensor.init");
    let mut draw = |c: &[usize]| -> Vec<f64> {
        let mut out = vec![0.0; c.len() * k];
        for (row, &n) in out.chunks_mut(k).zip(c) {
            if n > 0 {
                row.iter_mut().for_each(|x| *x = normal.sample(&mut init));
            }
        }
        out
    };
    let [uc, ic, cc] = &counts;
    let mut model = TensorModel {
        dims,
        k,
        lambda: config.lambda,
        user_factors: draw(uc),
        item_factors: draw(ic),
        context_factors: draw(cc),
        offset,
        scale,
        user_known: uc.iter().map(|&n| n > 0).collect(),
        item_known: ic.iter().map(|&n| n > 0).collect(),
        binning: None,
        loss_history: Vec::new(),
    };

    let initial = model.objective(cells);
    model.loss_history.push(initial);
    let mut rng = component_rng(config.seed, "tensor.sgd");
    let mut order: Vec<usize> = (0..cells.len()).collect();
    let lr = config.learning_rate;
    let lambda = config.lambda;
    let (mut ga, mut gb, mut gw) = (vec![0.0; k], vec![0.0; k], vec![0.0; k]);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for &p in &order {
            let x = cells[p];
            let e = x.value - model.raw_score(x.user, x.item, x.context);
            {
                let (a, b, w) = model.rows(x.user, x.item, x.context);
                let (ru, ri, rc) = (
                    lambda / uc[x.user] as f64,
                    lambda / ic[x.item] as f64,
                    lambda / cc[x.context] as f64,
                );
                for f in 0..k {
                    ga[f] = -2.0 * e * b[f] * w[f] + 2.0 * ru * a[f];
                    gb[f] = -2.0 * e * a[f] * w[f] + 2.0 * ri * b[f];
                    gw[f] = -2.0 * e * a[f] * b[f] + 2.0 * rc * w[f];
                }
            }
            for f in 0..k {
                model.user_factors[x.user * k + f] -= lr * ga[f];
                model.item_factors[x.item * k + f] -= lr * gb[f];
                model.context_factors[x.context * k + f] -= lr * gw[f];
            }
        }
        let loss = model.objective(cells);
        check_divergence(epoch, loss, initial)?;
        model.loss_history.push(loss);
    }
    Ok(model)
}

/// Fit on a rating dataset with timestamps bucketed into `bins` equal-width contexts.
pub fn tf_fit_dataset(train: &RatingDataset, bins: usize, config: &TrainConfig) -> Result<TensorModel> {
    let binning = ContextBinning::fit(train.interactions().iter().map(|x| x.timestamp), bins)?;
    let cells: Vec<ContextRating> = train
        .interactions()
        .iter()
        .zip(train.dense_pairs())
        .map(|(x, &(user, item))| ContextRating { user, item, context: binning.bin(x.timestamp), value: x.rating })
        .collect();
    let dims = TensorDims { n_users: train.n_users(), n_items: train.n_items(), n_contexts: bins };
    let mut model = tf_fit(&cells, dims, train.scale(), config)?;
    model.binning = Some(binning);
    Ok(model)
}

/// Clamped prediction for the cell (user, item, context).
pub fn tf_predict(model: &TensorModel, user: usize, item: usize, context: usize) -> Result<f64> {
    model.check_known(user, item)?;
    if context >= model.dims.n_contexts {
        return Err(Error::ColdStart(format!("context index {context} out of range")));
    }
    Ok(model.scale.clamp(model.raw_score(user, item, context)))
}

impl Predictor for TensorModel {
    fn predict(&self, user: usize, item: usize) -> Result<f64> {
        self.check_known(user, item)?;
        Ok(self.scale.clamp(self.context_free(user, item)))
    }

    fn predict_at(&self, user: usize, item: usize, timestamp: Option<i64>) -> Result<f64> {
        match (timestamp, self.binning) {
            (Some(t), Some(b)) => tf_predict(self, user, item, b.bin(t)),
            _ => self.predict(user, item),
        }
    }
}

//! Order-2 factorization machine
//! ŷ(x) = w₀ + Σ_i w_i x_i + Σ_{i<j} ⟨v_i, v_j⟩ x_i x_j,
//! trained by SGD on squared error with L2 on w and v.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::{check_divergence, Centering, TrainConfig};
use crate::data::{RatingDataset, RatingScale};
use crate::error::{Error, Result};
use crate::linalg::norm_sq;
use crate::model::Predictor;
use crate::rng::component_rng;

/// Sparse feature vector as (index, value) pairs with ascending indices.
pub type SparseFeatures = Vec<(usize, f64)>;

/// one-hot(user) ++ one-hot(item) ++ `n_extra` real-valued features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub n_users: usize,
    pub n_items: usize,
    pub n_extra: usize,
}

impl FeatureLayout {
    pub fn len(&self) -> usize {
        self.n_users + self.n_items + self.n_extra
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn fm_encode(layout: &FeatureLayout, user: usize, item: usize, extras: &[f64]) -> Result<SparseFeatures> {
    if user >= layout.n_users {
        return Err(Error::UnknownCategory(format!("user index {user} outside layout of {}", layout.n_users)));
    }
    if item >= layout.n_items {
        return Err(Error::UnknownCategory(format!("item index {item} outside layout of {}", layout.n_items)));
    }
    if extras.len() != layout.n_extra {
        return Err(Error::Dimension { expected: layout.n_extra, got: extras.len() });
    }
    let base = layout.n_users + layout.n_items;
    let mut x = Vec::with_capacity(2 + extras.len());
    x.push((user, 1.0));
    x.push((layout.n_users + item, 1.0));
    x.extend(extras.iter().enumerate().map(|(j, &v)| (base + j, v)));
    Ok(x)
}

/// Dense copy of a sparse feature vector.
pub fn to_dense(x: &[(usize, f64)], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for &(j, v) in x {
        out[j] += v;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmModel {
    pub layout: FeatureLayout,
    pub k: usize,
    pub lambda: f64,
    pub w0: f64,
    pub w: Vec<f64>,
    /// Row-major `n_features × k`.
    pub v: Vec<f64>,
    /// Centering offset added back at prediction.
    pub offset: f64,
    pub scale: RatingScale,
    pub user_known: Vec<bool>,
    pub item_known: Vec<bool>,
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FmGradient {
    pub w0: f64,
    pub w: Vec<f64>,
    pub v: Vec<f64>,
}

impl FmModel {
    /// A model with explicit parameters; all users and items count as observed.
    pub fn from_parts(layout: FeatureLayout, w0: f64, w: Vec<f64>, v: Vec<Vec<f64>>, scale: RatingScale) -> Result<Self> {
        let n = layout.len();
        if w.len() != n {
            return Err(Error::Dimension { expected: n, got: w.len() });
        }
        if v.len() != n {
            return Err(Error::Dimension { expected: n, got: v.len() });
        }
        let k = v.first().map_or(0, Vec::len);
        if k == 0 {
            return Err(Error::InvalidK("k_f must be at least 1".into()));
        }
        if let Some(bad) = v.iter().find(|r| r.len() != k) {
            return Err(Error::Dimension { expected: k, got: bad.len() });
        }
        Ok(Self {
            layout,
            k,
            lambda: 0.0,
            w0,
            w,
            v: v.concat(),
            offset: 0.0,
            scale,
            user_known: vec![true; layout.n_users],
            item_known: vec![true; layout.n_items],
            loss_history: Vec::new(),
        })
    }

    pub fn n_features(&self) -> usize {
        self.w.len()
    }

    fn check(&self, x: &[(usize, f64)]) -> Result<()> {
        let n = self.n_features();
        match x.iter().find(|&&(j, _)| j >= n) {
            Some(&(j, _)) => Err(Error::Dimension { expected: n, got: j + 1 }),
            None => Ok(()),
        }
    }

    /// Raw model output ŷ(x) using the linear-time pairwise identity
    /// Σ_{i<j}⟨v_i,v_j⟩x_i x_j = ½ Σ_f [(Σ_i v_if x_i)² − Σ_i v_if² x_i²].
    pub fn score(&self, x: &[(usize, f64)]) -> Result<f64> {
        self.check(x)?;
        let (linear, pair, _) = self.terms(x);
        Ok(self.w0 + linear + pair)
    }

    /// Linear term, pairwise term and the per-factor sums s_f = Σ_i v_if x_i.
    fn terms(&self, x: &[(usize, f64)]) -> (f64, f64, Vec<f64>) {
        let k = self.k;
        let linear: f64 = x.iter().map(|&(j, xj)| self.w[j] * xj).sum();
        let mut sums = vec![0.0; k];
        let mut pair = 0.0;
        for f in 0..k {
            let (mut s, mut sq) = (0.0, 0.0);
            for &(j, xj) in x {
                let t = self.v[j * k + f] * xj;
                s += t;
                sq += t * t;
            }
            sums[f] = s;
            pair += 0.5 * (s * s - sq);
        }
        (linear, pair, sums)
    }

    pub fn objective(&self, samples: &[(SparseFeatures, f64)]) -> Result<f64> {
        let mut sse = 0.0;
        for (x, y) in samples {
            let e = y - self.offset - self.score(x)?;
            sse += e * e;
        }
        Ok(sse + self.lambda * (norm_sq(&self.w) + norm_sq(&self.v)))
    }

    /// Gradient of [`objective`](Self::objective); w₀ is not penalised.
    pub fn gradient(&self, samples: &[(SparseFeatures, f64)]) -> Result<FmGradient> {
        let k = self.k;
        let mut g = FmGradient {
            w0: 0.0,
            w: self.w.iter().map(|x| 2.0 * self.lambda * x).collect(),
            v: self.v.iter().map(|x| 2.0 * self.lambda * x).collect(),
        };
        for (x, y) in samples {
            self.check(x)?;
            let (linear, pair, sums) = self.terms(x);
            let e = y - self.offset - (self.w0 + linear + pair);
            g.w0 -= 2.0 * e;
            for &(j, xj) in x {
                g.w[j] -= 2.0 * e * xj;
                for f in 0..k {
                    g.v[j * k + f] -= 2.0 * e * xj * (sums[f] - self.v[j * k + f] * xj);
                }
            }
        }
        Ok(g)
    }

    fn check_known(&self, user: usize, item: usize) -> Result<()> {
        if user >= self.layout.n_users || !self.user_known[user] {
            return Err(Error::cold_user(user));
        }
        if item >= self.layout.n_items || !self.item_known[item] {
            return Err(Error::cold_item(item));
        }
        Ok(())
    }
}

/// Clamped prediction `offset + ŷ(x)`.
pub fn fm_predict(model: &FmModel, x: &[(usize, f64)]) -> Result<f64> {
    Ok(model.scale.clamp(model.offset + model.score(x)?))
}

/// [`fm_predict`] on a dense vector whose length must match the layout.
pub fn fm_predict_dense(model: &FmModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.n_features() {
        return Err(Error::Dimension { expected: model.n_features(), got: x.len() });
    }
    let sparse: SparseFeatures = x.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, &v)| (j, v)).collect();
    fm_predict(model, &sparse)
}

pub fn fm_fit(
    samples: &[(SparseFeatures, f64)],
    layout: FeatureLayout,
    scale: RatingScale,
    config: &TrainConfig,
) -> Result<FmModel> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = layout.len();
    let k = config.factors;
    let mut counts = vec![0usize; n];
    for (x, _) in samples {
        for &(j, xj) in x {
            if j >= n {
                return Err(Error::Dimension { expected: n, got: j + 1 });
            }
            if xj != 0.0 {
                counts[j] += 1;
            }
        }
    }
    let offset = match config.centering {
        Centering::None => 0.0,
        Centering::GlobalMean => samples.iter().map(|s| s.1).sum::<f64>() / samples.len() as f64,
    };
    let normal = Normal::new(0.0, config.init_std()).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut init = component_rng(config.seed, "fm.init");
    let v: Vec<f64> = (0..n * k).map(|_| normal.sample(&mut init)).collect();
    let mut model = FmModel {
        layout,
        k,
        lambda: config.lambda,
        w0: 0.0,
        w: vec![0.0; n],
        v,
        offset,
        scale,
        user_known: counts[..layout.n_users].iter().map(|&c| c > 0).collect(),
        item_known: counts[layout.n_users..layout.n_users + layout.n_items].iter().map(|&c| c > 0).collect(),
        loss_history: Vec::new(),
    };

    let initial = model.objective(samples)?;
    model.loss_history.push(initial);
    let mut rng = component_rng(config.seed, "fm.sgd");
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let lr = config.learning_rate;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for &p in &order {
            let (x, y) = &samples[p];
            let (linear, pair, sums) = model.terms(x);
            let e = y - offset - (model.w0 + linear + pair);
            model.w0 += lr * 2.0 * e;
            for &(j, xj) in x {
                if xj == 0.0 {
                    continue;
                }
                // Each feature's share of the penalty is spread over the samples it occurs in.
                let reg = model.lambda / counts[j] as f64;
                model.w[j] -= lr * (-2.0 * e * xj + 2.0 * reg * model.w[j]);
                for f in 0..k {
                    let vjf = model.v[j * k + f];
                    model.v[j * k + f] -= lr * (-2.0 * e * xj * (sums[f] - vjf * xj) + 2.0 * reg * vjf);
                }
            }
        }
        let loss = model.objective(samples)?;
        check_divergence(epoch, loss, initial)?;
        model.loss_history.push(loss);
    }
    Ok(model)
}

/// Fit on (user, item) one-hot pairs with no extra features.
pub fn fm_fit_dataset(train: &RatingDataset, config: &TrainConfig) -> Result<FmModel> {
    let layout = FeatureLayout { n_users: train.n_users(), n_items: train.n_items(), n_extra: 0 };
    let samples = train
        .triplets()
        .map(|(u, i, r)| Ok((fm_encode(&layout, u, i, &[])?, r)))
        .collect::<Result<Vec<_>>>()?;
    fm_fit(&samples, layout, train.scale(), config)
}

impl Predictor for FmModel {
    fn predict(&self, user: usize, item: usize) -> Result<f64> {
        self.check_known(user, item)?;
        if self.layout.n_extra > 0 {
            return Err(Error::Dimension { expected: self.layout.n_extra, got: 0 });
        }
        fm_predict(self, &fm_encode(&self.layout, user, item, &[])?)
    }
}

//! Neighbourhood collaborative filtering (user- and item-based) and
//! content-based filtering over item feature vectors.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{rank_order, RatingDataset, RatingScale, SparseRatingMatrix};
use crate::error::{Error, Result};
use crate::ingest::{Catalog, ItemFeatures};
use crate::linalg::{dot, norm_sq};
use crate::model::Predictor;
use crate::preprocess::Axis;

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension { expected: a.len(), got: b.len() });
    }
    let denom = norm_sq(a).sqrt() * norm_sq(b).sqrt();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((dot(a, b) / denom).clamp(-1.0, 1.0))
}

/// Sparse similarity over users or items. Off-diagonal entries that are
/// zero are not stored; the diagonal is kept separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub axis: Axis,
    /// Per entity, (other, similarity) with ascending `other`.
    rows: Vec<Vec<(usize, f64)>>,
    diagonal: Vec<f64>,
}

impl SimilarityMatrix {
    /// `rows[a]` must be sorted by entity and must not contain `a` itself.
    pub fn from_rows(axis: Axis, rows: Vec<Vec<(usize, f64)>>, diagonal: Vec<f64>) -> Result<Self> {
        if rows.len() != diagonal.len() {
            return Err(Error::Dimension { expected: rows.len(), got: diagonal.len() });
        }
        for (a, row) in rows.iter().enumerate() {
            if row.windows(2).any(|w| w[0].0 >= w[1].0) || row.iter().any(|e| e.0 == a || e.0 >= rows.len()) {
                return Err(Error::Value(format!("similarity row {a} is unsorted or malformed")));
            }
        }
        Ok(Self { axis, rows, diagonal })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        if a == b {
            return self.diagonal[a];
        }
        let row = &self.rows[a];
        row.binary_search_by_key(&b, |e| e.0).map_or(0.0, |p| row[p].1)
    }

    /// Stored off-diagonal entries of row `a`.
    pub fn row(&self, a: usize) -> &[(usize, f64)] {
        &self.rows[a]
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }
}

/// Fitted neighbourhood model. Entities are users in user mode and items in
/// item mode; internally the matrix is stored oriented so that rows are
/// entities, which makes item mode on R the same computation as user mode on Rᵀ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub mode: Axis,
    pub neighborhood_size: usize,
    pub similarity: SimilarityMatrix,
    /// Per entity, the top `neighborhood_size` positively similar entities.
    pub neighbors: Vec<Vec<(usize, f64)>>,
    oriented: SparseRatingMatrix,
    entity_means: Vec<f64>,
    user_means: Vec<f64>,
    pub scale: RatingScale,
}

/// Adjusted cosine between two entities over the coordinates both observed,
/// after subtracting each entity's own mean rating.
fn similarity_row(
    m: &SparseRatingMatrix,
    means: &[f64],
    a: usize,
    buf: &mut [(f64, f64, f64)],
    touched: &mut Vec<usize>,
) -> Vec<(usize, f64)> {
    let (cols, vals) = m.row(a);
    for (&j, &r) in cols.iter().zip(vals) {
        let ca = r - means[a];
        let (others, ovals) = m.col(j);
        for (&b, &rb) in others.iter().zip(ovals) {
            if b == a {
                continue;
            }
            let cb = rb - means[b];
            let slot = &mut buf[b];
            if slot.0 == 0.0 && slot.1 == 0.0 && slot.2 == 0.0 {
                touched.push(b);
            }
            slot.0 += ca * cb;
            slot.1 += ca * ca;
            slot.2 += cb * cb;
        }
    }
    touched.sort_unstable();
    touched.dedup();
    let mut out = Vec::with_capacity(touched.len());
    for &b in touched.iter() {
        let (d, na, nb) = buf[b];
        let denom = na.sqrt() * nb.sqrt();
        if denom > 0.0 {
            let s = (d / denom).clamp(-1.0, 1.0);
            if s != 0.0 {
                out.push((b, s));
            }
        }
        buf[b] = (0.0, 0.0, 0.0);
    }
    touched.clear();
    out
}

/// Similarity matrix over the rows of `m` (adjusted cosine on co-rated entries).
pub fn row_similarity(m: &SparseRatingMatrix, axis: Axis) -> SimilarityMatrix {
    let means: Vec<f64> = (0..m.n_users()).map(|u| m.row_mean(u).unwrap_or(0.0)).collect();
    let rows: Vec<Vec<(usize, f64)>> = (0..m.n_users())
        .into_par_iter()
        .map_init(
            || (vec![(0.0, 0.0, 0.0); m.n_users()], Vec::new()),
            |(buf, touched), a| similarity_row(m, &means, a, buf, touched),
        )
        .collect();
    let diagonal = (0..m.n_users()).map(|a| if m.row_len(a) > 0 { 1.0 } else { 0.0 }).collect();
    SimilarityMatrix { axis, rows, diagonal }
}

pub fn knn_fit(matrix: &SparseRatingMatrix, mode: Axis, neighborhood_size: usize, scale: RatingScale) -> Result<KnnModel> {
    if matrix.nnz() == 0 {
        return Err(Error::EmptyDataset);
    }
    if neighborhood_size == 0 {
        return Err(Error::InvalidK("neighborhood size must be at least 1".into()));
    }
    let oriented = match mode {
        Axis::User => matrix.clone(),
        Axis::Item => matrix.transpose(),
    };
    let similarity = row_similarity(&oriented, mode);
    let neighbors = (0..oriented.n_users())
        .map(|a| {
            let mut cands: Vec<(usize, f64)> = similarity.row(a).iter().copied().filter(|e| e.1 > 0.0).collect();
            cands.sort_by(rank_order);
            cands.truncate(neighborhood_size);
            cands
        })
        .collect();
    let entity_means = (0..oriented.n_users()).map(|a| oriented.row_mean(a).unwrap_or(0.0)).collect();
    let user_means = (0..matrix.n_users()).map(|u| matrix.row_mean(u).unwrap_or(0.0)).collect();
    Ok(KnnModel { mode, neighborhood_size, similarity, neighbors, oriented, entity_means, user_means, scale })
}

/// Predict r̂_ui as the target entity's mean plus the similarity-weighted
/// mean of centered ratings from its `neighborhood_size` most similar
/// positively-correlated entities that observed the other coordinate. With
/// no such neighbour the user's mean rating is returned.
pub fn knn_predict(model: &KnnModel, user: usize, item: usize) -> Result<f64> {
    let m = &model.oriented;
    let (n_u, n_i) = match model.mode {
        Axis::User => (m.n_users(), m.n_items()),
        Axis::Item => (m.n_items(), m.n_users()),
    };
    if user >= n_u || model.user_means.get(user).is_none() || !has_history(model, Axis::User, user) {
        return Err(Error::cold_user(user));
    }
    if item >= n_i || !has_history(model, Axis::Item, item) {
        return Err(Error::cold_item(item));
    }
    let (target, other) = match model.mode {
        Axis::User => (user, item),
        Axis::Item => (item, user),
    };
    // Entities that observed `other`, weighted by similarity to `target`.
    let (raters, ratings) = m.col(other);
    let mut cands: Vec<(usize, f64, f64)> = raters
        .iter()
        .zip(ratings)
        .filter(|(&b, _)| b != target)
        .filter_map(|(&b, &r)| {
            let s = model.similarity.get(target, b);
            (s > 0.0).then_some((b, s, r))
        })
        .collect();
    if cands.is_empty() {
        return Ok(model.scale.clamp(model.user_means[user]));
    }
    cands.sort_by(|x, y| rank_order(&(x.0, x.1), &(y.0, y.1)));
    cands.truncate(model.neighborhood_size);
    let (mut num, mut den) = (0.0, 0.0);
    for &(b, s, r) in &cands {
        num += s * (r - model.entity_means[b]);
        den += s;
    }
    Ok(model.scale.clamp(model.entity_means[target] + num / den))
}

fn has_history(model: &KnnModel, axis: Axis, idx: usize) -> bool {
    let m = &model.oriented;
    match (model.mode, axis) {
        (Axis::User, Axis::User) | (Axis::Item, Axis::Item) => m.row_len(idx) > 0,
        _ => m.col_len(idx) > 0,
    }
}

impl Predictor for KnnModel {
    fn predict(&self, user: usize, item: usize) -> Result<f64> {
        knn_predict(self, user, item)
    }
}

/// Aggregate taste vector of one user in item-feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: u64,
    pub vector: Vec<f64>,
    pub threshold: f64,
}

pub const DEFAULT_LIKE_THRESHOLD: f64 = 4.0;

/// Mean feature vector of the catalog items `user_id` rated at least
/// `like_threshold`. Liked items missing from the catalog are skipped.
pub fn build_user_profile(dataset: &RatingDataset, catalog: &Catalog, user_id: u64, like_threshold: f64) -> Result<UserProfile> {
    let mut sum = vec![0.0; catalog.feature_len()];
    let mut n = 0usize;
    for x in dataset.interactions().iter().filter(|x| x.user_id == user_id && x.rating >= like_threshold) {
        if let Some(features) = catalog.get(x.item_id) {
            sum.iter_mut().zip(&features.features).for_each(|(s, f)| *s += f);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::ColdStart(format!("user {user_id} has no items rated >= {like_threshold}")));
    }
    sum.iter_mut().for_each(|s| *s /= n as f64);
    Ok(UserProfile { user_id, vector: sum, threshold: like_threshold })
}

/// Cosine between a profile and an item's features.
pub fn cbf_predict(profile: &UserProfile, item: &ItemFeatures) -> Result<f64> {
    cosine_similarity(&profile.vector, &item.features)
}

/// Content-based scorer over dense indices. Cosine scores in [0, 1] are
/// mapped affinely onto the rating scale so they can be mixed with CF output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbfModel {
    profiles: Vec<Option<Vec<f64>>>,
    item_features: Vec<Option<Vec<f64>>>,
    pub threshold: f64,
    pub scale: RatingScale,
}

impl CbfModel {
    pub fn fit(train: &RatingDataset, catalog: &Catalog, like_threshold: f64) -> Result<Self> {
        let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
        for (x, &(u, _)) in train.interactions().iter().zip(train.dense_pairs()) {
            if x.rating < like_threshold {
                continue;
            }
            if let Some(f) = catalog.get(x.item_id) {
                let e = sums.entry(u).or_insert_with(|| (vec![0.0; catalog.feature_len()], 0));
                e.0.iter_mut().zip(&f.features).for_each(|(s, v)| *s += v);
                e.1 += 1;
            }
        }
        let mut profiles = vec![None; train.n_users()];
        for (u, (mut v, n)) in sums {
            v.iter_mut().for_each(|s| *s /= n as f64);
            profiles[u] = Some(v);
        }
        let item_features = train.items().ids().iter().map(|&id| catalog.get(id).map(|f| f.features.clone())).collect();
        Ok(Self { profiles, item_features, threshold: like_threshold, scale: train.scale() })
    }

    /// Raw cosine between user `user`'s profile and item `item`.
    pub fn cosine(&self, user: usize, item: usize) -> Result<f64> {
        let profile = self.profiles.get(user).and_then(Option::as_ref).ok_or_else(|| Error::cold_user(user))?;
        let features = self.item_features.get(item).and_then(Option::as_ref).ok_or_else(|| Error::cold_item(item))?;
        cosine_similarity(profile, features)
    }
}

impl Predictor for CbfModel {
    fn predict(&self, user: usize, item: usize) -> Result<f64> {
        let c = self.cosine(user, item)?;
        Ok(self.scale.clamp(self.scale.min + c * self.scale.width()))
    }
}

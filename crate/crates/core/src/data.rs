//! Canonical data types: interactions, the rating dataset with its dense id
//! maps, the sparse user-item matrix, and top-k recommendation lists.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::hash::Hash;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed interval of admissible rating values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "ScaleRepr", into = "ScaleRepr")]
pub struct RatingScale {
    pub min: f64,
    pub max: f64,
}

/// JSON has no infinities; unbounded ends travel as `null`.
#[derive(Serialize, Deserialize)]
struct ScaleRepr {
    min: Option<f64>,
    max: Option<f64>,
}

impl From<ScaleRepr> for RatingScale {
    fn from(r: ScaleRepr) -> Self {
        RatingScale { min: r.min.unwrap_or(f64::NEG_INFINITY), max: r.max.unwrap_or(f64::INFINITY) }
    }
}

impl From<RatingScale> for ScaleRepr {
    fn from(s: RatingScale) -> Self {
        ScaleRepr { min: s.min.is_finite().then_some(s.min), max: s.max.is_finite().then_some(s.max) }
    }
}

impl RatingScale {
    /// The 1-5 star scale used by MovieLens.
    pub const STARS: RatingScale = RatingScale { min: 1.0, max: 5.0 };

    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min < max) || min.is_nan() || max.is_nan() {
            return Err(Error::InvalidConfig(format!("rating scale [{min}, {max}] is empty")));
        }
        Ok(Self { min, max })
    }

    /// A scale that never clamps. Used for residual and synthetic targets.
    pub fn unbounded() -> Self {
        Self { min: f64::NEG_INFINITY, max: f64::INFINITY }
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.min && value <= self.max
    }

    pub fn clamp(&self, value: f64) -> f64 {
        value.clamp(self.min, self.max)
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }
}

impl Default for RatingScale {
    fn default() -> Self {
        Self::STARS
    }
}

/// One observed (user, item, rating, timestamp) event, keyed by raw ids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user_id: u64,
    pub item_id: u64,
    pub rating: f64,
    pub timestamp: i64,
}

impl Interaction {
    pub fn new(user_id: u64, item_id: u64, rating: f64, timestamp: i64) -> Self {
        Self { user_id, item_id, rating, timestamp }
    }
}

/// Bijection between raw ids and dense indices `0..len`, ordered by raw id.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(from = "Vec<u64>", into = "Vec<u64>")]
pub struct IdIndex {
    ids: Vec<u64>,
    lookup: HashMap<u64, usize>,
}

impl IdIndex {
    /// Build from arbitrary raw ids; duplicates are collapsed and the dense
    /// order follows ascending raw id.
    pub fn from_ids(ids: impl IntoIterator<Item = u64>) -> Self {
        let mut ids: Vec<u64> = ids.into_iter().collect();
        ids.sort_unstable();
        ids.dedup();
        let lookup = ids.iter().enumerate().map(|(dense, &id)| (id, dense)).collect();
        Self { ids, lookup }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dense(&self, id: u64) -> Option<usize> {
        self.lookup.get(&id).copied()
    }

    pub fn raw(&self, dense: usize) -> u64 {
        self.ids[dense]
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }
}

impl From<Vec<u64>> for IdIndex {
    fn from(ids: Vec<u64>) -> Self {
        Self::from_ids(ids)
    }
}

impl From<IdIndex> for Vec<u64> {
    fn from(index: IdIndex) -> Self {
        index.ids
    }
}

impl PartialEq for IdIndex {
    fn eq(&self, other: &Self) -> bool {
        self.ids == other.ids
    }
}

/// Immutable collection of interactions with dense user and item indices.
///
/// Subsets produced by splitting share the parent's id maps, so a dense
/// index means the same entity in a train set, its test set and every model
/// fitted on either.
#[derive(Debug, Clone)]
pub struct RatingDataset {
    interactions: Vec<Interaction>,
    dense: Vec<(usize, usize)>,
    users: Arc<IdIndex>,
    items: Arc<IdIndex>,
    scale: RatingScale,
}

impl RatingDataset {
    /// Validate and index `interactions`. Duplicate (user, item) pairs are
    /// rejected; line numbers in errors are 1-based positions in the input.
    pub fn new(interactions: Vec<Interaction>, scale: RatingScale) -> Result<Self> {
        let users = IdIndex::from_ids(interactions.iter().map(|x| x.user_id));
        let items = IdIndex::from_ids(interactions.iter().map(|x| x.item_id));
        Self::with_index(interactions, Arc::new(users), Arc::new(items), scale)
    }

    /// Build a dataset over existing id maps. Every interaction's ids must
    /// already be present in the maps.
    pub fn with_index(
        interactions: Vec<Interaction>,
        users: Arc<IdIndex>,
        items: Arc<IdIndex>,
        scale: RatingScale,
    ) -> Result<Self> {
        let mut seen = HashSet::with_capacity(interactions.len());
        let mut dense = Vec::with_capacity(interactions.len());
        for (pos, x) in interactions.iter().enumerate() {
            let line = pos + 1;
            if !x.rating.is_finite() || !scale.contains(x.rating) {
                return Err(Error::parse(
                    line,
                    format!("rating {} outside scale [{}, {}]", x.rating, scale.min, scale.max),
                ));
            }
            if x.timestamp < 0 {
                return Err(Error::parse(line, format!("negative timestamp {}", x.timestamp)));
            }
            let u = users
                .dense(x.user_id)
                .ok_or_else(|| Error::parse(line, format!("user {} not in index", x.user_id)))?;
            let i = items
                .dense(x.item_id)
                .ok_or_else(|| Error::parse(line, format!("item {} not in index", x.item_id)))?;
            if !seen.insert((u, i)) {
                return Err(Error::DuplicateInteraction { user_id: x.user_id, item_id: x.item_id, line });
            }
            dense.push((u, i));
        }
        Ok(Self { interactions, dense, users, items, scale })
    }

    /// The interactions at `positions`, in the given order, over the same id maps.
    pub fn subset(&self, positions: &[usize]) -> RatingDataset {
        RatingDataset {
            interactions: positions.iter().map(|&p| self.interactions[p]).collect(),
            dense: positions.iter().map(|&p| self.dense[p]).collect(),
            users: Arc::clone(&self.users),
            items: Arc::clone(&self.items),
            scale: self.scale,
        }
    }

    /// Same keys, new rating values (for residual fitting). Values are not
    /// checked against any scale; the result carries `scale`.
    pub fn with_ratings(&self, ratings: &[f64], scale: RatingScale) -> Result<RatingDataset> {
        if ratings.len() != self.len() {
            return Err(Error::Dimension { expected: self.len(), got: ratings.len() });
        }
        let interactions = self
            .interactions
            .iter()
            .zip(ratings)
            .map(|(x, &r)| Interaction { rating: r, ..*x })
            .collect();
        Ok(RatingDataset {
            interactions,
            dense: self.dense.clone(),
            users: Arc::clone(&self.users),
            items: Arc::clone(&self.items),
            scale,
        })
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    /// Dense (user, item) for every interaction, aligned with `interactions()`.
    pub fn dense_pairs(&self) -> &[(usize, usize)] {
        &self.dense
    }

    /// `(user, item, rating)` in dense coordinates.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.dense.iter().zip(&self.interactions).map(|(&(u, i), x)| (u, i, x.rating))
    }

    pub fn users(&self) -> &Arc<IdIndex> {
        &self.users
    }

    pub fn items(&self) -> &Arc<IdIndex> {
        &self.items
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn scale(&self) -> RatingScale {
        self.scale
    }

    pub fn ratings(&self) -> impl Iterator<Item = f64> + '_ {
        self.interactions.iter().map(|x| x.rating)
    }

    /// Interaction counts per dense user.
    pub fn user_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_users()];
        for &(u, _) in &self.dense {
            counts[u] += 1;
        }
        counts
    }

    /// Interaction counts per dense item.
    pub fn item_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_items()];
        for &(_, i) in &self.dense {
            counts[i] += 1;
        }
        counts
    }
}

impl PartialEq for RatingDataset {
    fn eq(&self, other: &Self) -> bool {
        self.interactions == other.interactions
            && self.users == other.users
            && self.items == other.items
            && self.scale == other.scale
    }
}

/// The user-item matrix with compressed row and column adjacency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseRatingMatrix {
    n_users: usize,
    n_items: usize,
    row_ptr: Vec<usize>,
    row_items: Vec<usize>,
    row_values: Vec<f64>,
    col_ptr: Vec<usize>,
    col_users: Vec<usize>,
    col_values: Vec<f64>,
}

impl SparseRatingMatrix {
    /// Build from dense-coordinate triplets. Rejects out-of-range indices and
    /// repeated cells.
    pub fn from_triplets(
        n_users: usize,
        n_items: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut cells: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(u, i, _) in &cells {
            if u >= n_users {
                return Err(Error::Dimension { expected: n_users, got: u + 1 });
            }
            if i >= n_items {
                return Err(Error::Dimension { expected: n_items, got: i + 1 });
            }
        }
        cells.sort_unstable_by_key(|&(u, i, _)| (u, i));
        for pair in cells.windows(2) {
            if pair[0].0 == pair[1].0 && pair[0].1 == pair[1].1 {
                return Err(Error::DuplicateInteraction {
                    user_id: pair[0].0 as u64,
                    item_id: pair[0].1 as u64,
                    line: 0,
                });
            }
        }

        let mut row_ptr = vec![0; n_users + 1];
        for &(u, _, _) in &cells {
            row_ptr[u + 1] += 1;
        }
        for u in 0..n_users {
            row_ptr[u + 1] += row_ptr[u];
        }
        let row_items = cells.iter().map(|c| c.1).collect();
        let row_values = cells.iter().map(|c| c.2).collect();

        // Column view: stable sort by item keeps users ascending within a column.
        let mut by_col = cells;
        by_col.sort_by_key(|&(_, i, _)| i);
        let mut col_ptr = vec![0; n_items + 1];
        for &(_, i, _) in &by_col {
            col_ptr[i + 1] += 1;
        }
        for i in 0..n_items {
            col_ptr[i + 1] += col_ptr[i];
        }
        let col_users = by_col.iter().map(|c| c.0).collect();
        let col_values = by_col.iter().map(|c| c.2).collect();

        Ok(Self { n_users, n_items, row_ptr, row_items, row_values, col_ptr, col_users, col_values })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn nnz(&self) -> usize {
        self.row_items.len()
    }

    /// Items and ratings of user `u`, items ascending.
    pub fn row(&self, u: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[u]..self.row_ptr[u + 1];
        (&self.row_items[span.clone()], &self.row_values[span])
    }

    /// Users and ratings of item `i`, users ascending.
    pub fn col(&self, i: usize) -> (&[usize], &[f64]) {
        let span = self.col_ptr[i]..self.col_ptr[i + 1];
        (&self.col_users[span.clone()], &self.col_values[span])
    }

    pub fn row_len(&self, u: usize) -> usize {
        self.row_ptr[u + 1] - self.row_ptr[u]
    }

    pub fn col_len(&self, i: usize) -> usize {
        self.col_ptr[i + 1] - self.col_ptr[i]
    }

    pub fn get(&self, u: usize, i: usize) -> Option<f64> {
        if u >= self.n_users {
            return None;
        }
        let (items, values) = self.row(u);
        items.binary_search(&i).ok().map(|pos| values[pos])
    }

    /// All entries in row-major order.
    pub fn flatten(&self) -> Vec<(usize, usize, f64)> {
        (0..self.n_users)
            .flat_map(|u| {
                let (items, values) = self.row(u);
                items.iter().zip(values).map(move |(&i, &r)| (u, i, r))
            })
            .collect()
    }

    pub fn transpose(&self) -> SparseRatingMatrix {
        SparseRatingMatrix {
            n_users: self.n_items,
            n_items: self.n_users,
            row_ptr: self.col_ptr.clone(),
            row_items: self.col_users.clone(),
            row_values: self.col_values.clone(),
            col_ptr: self.row_ptr.clone(),
            col_users: self.row_items.clone(),
            col_values: self.row_values.clone(),
        }
    }

    pub fn row_mean(&self, u: usize) -> Option<f64> {
        let (_, values) = self.row(u);
        mean_of(values)
    }

    pub fn col_mean(&self, i: usize) -> Option<f64> {
        let (_, values) = self.col(i);
        mean_of(values)
    }

    pub fn mean(&self) -> Option<f64> {
        mean_of(&self.row_values)
    }
}

fn mean_of(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// The user-item matrix of `dataset` in its dense coordinates.
pub fn build_matrix(dataset: &RatingDataset) -> Result<SparseRatingMatrix> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    SparseRatingMatrix::from_triplets(dataset.n_users(), dataset.n_items(), dataset.triplets())
}

/// Arithmetic mean of every rating.
pub fn global_mean(dataset: &RatingDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(dataset.ratings().sum::<f64>() / dataset.len() as f64)
}

/// Ranked recommendations for one user, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationList<Id = usize> {
    pub user: Id,
    pub items: Vec<(Id, f64)>,
}

impl<Id: Copy> RecommendationList<Id> {
    pub fn item_ids(&self) -> Vec<Id> {
        self.items.iter().map(|&(id, _)| id).collect()
    }
}

/// Descending by score, NaN last, ties by ascending id.
pub(crate) fn rank_order<Id: Ord>(a: &(Id, f64), b: &(Id, f64)) -> Ordering {
    let key = |s: f64| if s.is_nan() { f64::NEG_INFINITY } else { s };
    key(b.1).total_cmp(&key(a.1)).then_with(|| a.0.cmp(&b.0))
}

/// The `k` best-scored items, excluding `exclude`. Equal scores are broken
/// by ascending item id.
pub fn top_k<Id>(
    user: Id,
    scores: impl IntoIterator<Item = (Id, f64)>,
    k: usize,
    exclude: &HashSet<Id>,
) -> Result<RecommendationList<Id>>
where
    Id: Ord + Copy + Hash,
{
    if k == 0 {
        return Err(Error::InvalidK("top-k needs k >= 1".into()));
    }
    let mut ranked: Vec<(Id, f64)> = scores.into_iter().filter(|(id, _)| !exclude.contains(id)).collect();
    if ranked.len() > k {
        ranked.select_nth_unstable_by(k - 1, rank_order);
        ranked.truncate(k);
    }
    ranked.sort_by(rank_order);
    Ok(RecommendationList { user, items: ranked })
}

//! Train/test partitioning: random hold-out, time cutoff, k-fold, per-user
//! stratified, and validation carving.
//!
//! Every subset keeps the source dataset's id maps, and interactions inside a
//! subset keep their original relative order.

use std::collections::BTreeSet;
use std::io::Write;

use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::RatingDataset;
use crate::error::{Error, Result};
use crate::ingest::write_ratings;
use crate::rng::component_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitStrategy {
    Random,
    Time,
    KFold { fold: usize, k: usize },
    Stratified,
}

#[derive(Debug, Clone)]
pub struct SplitResult {
    pub train: RatingDataset,
    pub test: RatingDataset,
    pub validation: Option<RatingDataset>,
    pub seed: u64,
    pub strategy: SplitStrategy,
    pub warnings: Vec<String>,
}

impl SplitResult {
    fn from_mask(dataset: &RatingDataset, in_test: &[bool], seed: u64, strategy: SplitStrategy) -> Self {
        let (test_pos, train_pos): (Vec<usize>, Vec<usize>) = (0..dataset.len()).partition(|&p| in_test[p]);
        SplitResult {
            train: dataset.subset(&train_pos),
            test: dataset.subset(&test_pos),
            validation: None,
            seed,
            strategy,
            warnings: Vec::new(),
        }
    }

    /// Write `train.tsv`, `test.tsv` and (if present) `validation.tsv` style
    /// payloads through the supplied writers.
    pub fn export<W: Write>(&self, train: W, test: W, validation: Option<W>) -> Result<()> {
        write_ratings(&self.train, train)?;
        write_ratings(&self.test, test)?;
        if let (Some(v), Some(w)) = (&self.validation, validation) {
            write_ratings(v, w)?;
        }
        Ok(())
    }
}

fn check_fraction(fraction: f64) -> Result<()> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidFraction(fraction));
    }
    Ok(())
}

fn shuffled_positions(n: usize, seed: u64, component: &str) -> Vec<usize> {
    let mut positions: Vec<usize> = (0..n).collect();
    positions.shuffle(&mut component_rng(seed, component));
    positions
}

/// Uniform random hold-out of `round(test_fraction * N)` interactions.
pub fn train_test_split(dataset: &RatingDataset, test_fraction: f64, seed: u64) -> Result<SplitResult> {
    check_fraction(test_fraction)?;
    if dataset.len() < 2 {
        return Err(Error::Value(format!("need at least 2 interactions to split, have {}", dataset.len())));
    }
    let n_test = (test_fraction * dataset.len() as f64).round() as usize;
    let mut in_test = vec![false; dataset.len()];
    for &p in shuffled_positions(dataset.len(), seed, "split.random").iter().take(n_test) {
        in_test[p] = true;
    }
    Ok(SplitResult::from_mask(dataset, &in_test, seed, SplitStrategy::Random))
}

/// Interactions strictly before `cutoff` train; the rest test.
pub fn time_split(dataset: &RatingDataset, cutoff: i64) -> SplitResult {
    let in_test: Vec<bool> = dataset.interactions().iter().map(|x| x.timestamp >= cutoff).collect();
    let mut split = SplitResult::from_mask(dataset, &in_test, 0, SplitStrategy::Time);
    for (name, part) in [("train", &split.train), ("test", &split.test)] {
        if part.is_empty() {
            let msg = format!("time split at {cutoff} leaves the {name} side empty");
            warn!("{msg}");
            split.warnings.push(msg);
        }
    }
    split
}

/// `k` splits whose test parts partition the data; fold sizes differ by at most one.
pub fn kfold(dataset: &RatingDataset, k: usize, seed: u64) -> Result<Vec<SplitResult>> {
    let fold_of = fold_assignment(dataset.len(), k, seed)?;
    Ok((0..k)
        .map(|fold| {
            let in_test: Vec<bool> = fold_of.iter().map(|&f| f == fold).collect();
            SplitResult::from_mask(dataset, &in_test, seed, SplitStrategy::KFold { fold, k })
        })
        .collect())
}

/// Fold index of every interaction under the same assignment `kfold` uses.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 || k > n {
        return Err(Error::InvalidK(format!("k-fold needs 2 <= k <= N, got k={k}, N={n}")));
    }
    let order = shuffled_positions(n, seed, "split.kfold");
    let mut fold_of = vec![0; n];
    for fold in 0..k {
        for &p in &order[fold * n / k..(fold + 1) * n / k] {
            fold_of[p] = fold;
        }
    }
    Ok(fold_of)
}

/// Per-user hold-out: each user sends `round(f * n_u)` interactions to test
/// but always keeps at least one in train when `n_u >= 2`. Afterwards any
/// item with two or more interactions that landed entirely in test gets its
/// first test interaction moved back to train.
pub fn stratified_split(dataset: &RatingDataset, test_fraction: f64, seed: u64) -> Result<SplitResult> {
    check_fraction(test_fraction)?;
    let mut by_user: Vec<Vec<usize>> = vec![Vec::new(); dataset.n_users()];
    for (p, &(u, _)) in dataset.dense_pairs().iter().enumerate() {
        by_user[u].push(p);
    }
    let mut rng = component_rng(seed, "split.stratified");
    let mut in_test = vec![false; dataset.len()];
    for positions in &mut by_user {
        let n_u = positions.len();
        if n_u < 2 {
            continue;
        }
        let n_test = ((test_fraction * n_u as f64).round() as usize).min(n_u - 1);
        positions.shuffle(&mut rng);
        for &p in positions.iter().take(n_test) {
            in_test[p] = true;
        }
    }

    let mut item_train = vec![0usize; dataset.n_items()];
    let mut item_total = vec![0usize; dataset.n_items()];
    for (p, &(_, i)) in dataset.dense_pairs().iter().enumerate() {
        item_total[i] += 1;
        if !in_test[p] {
            item_train[i] += 1;
        }
    }
    for (p, &(_, i)) in dataset.dense_pairs().iter().enumerate() {
        if in_test[p] && item_total[i] >= 2 && item_train[i] == 0 {
            in_test[p] = false;
            item_train[i] += 1;
        }
    }
    Ok(SplitResult::from_mask(dataset, &in_test, seed, SplitStrategy::Stratified))
}

/// Move `round(val_fraction * |train|)` random training interactions into a
/// validation set. The test set is not touched.
pub fn carve_validation(split: &SplitResult, val_fraction: f64, seed: u64) -> Result<SplitResult> {
    if split.validation.is_some() {
        return Err(Error::AlreadyCarved);
    }
    check_fraction(val_fraction)?;
    let n = split.train.len();
    let n_val = (val_fraction * n as f64).round() as usize;
    if n_val == 0 || n_val >= n {
        return Err(Error::InvalidFraction(val_fraction));
    }
    let chosen: BTreeSet<usize> = shuffled_positions(n, seed, "split.validation").into_iter().take(n_val).collect();
    let (val_pos, train_pos): (Vec<usize>, Vec<usize>) = (0..n).partition(|p| chosen.contains(p));
    Ok(SplitResult {
        train: split.train.subset(&train_pos),
        test: split.test.clone(),
        validation: Some(split.train.subset(&val_pos)),
        seed: split.seed,
        strategy: split.strategy,
        warnings: split.warnings.clone(),
    })
}

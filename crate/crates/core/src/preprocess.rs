//! Normalization (min-max, z-score, robust, logarithmic), per-user or
//! per-item centering of the sparse rating matrix, and feature engineering.

use serde::{Deserialize, Serialize};

use crate::data::{RatingDataset, SparseRatingMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum NormalizationMethod {
    MinMax,
    ZScore,
    Robust,
    Log { base: f64 },
}

impl NormalizationMethod {
    pub fn natural_log() -> Self {
        NormalizationMethod::Log { base: std::f64::consts::E }
    }
}

/// Fitted parameters of one normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum NormalizationParams {
    MinMax { min: f64, max: f64 },
    ZScore { mean: f64, std: f64 },
    Robust { median: f64, iqr: f64 },
    Log { base: f64 },
}

/// Linear-interpolation quantile of an ascending slice (`q` in `[0, 1]`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn check_log_base(base: f64) -> Result<()> {
    if !(base > 0.0) || base == 1.0 || !base.is_finite() {
        return Err(Error::Domain(format!("log base {base} must be positive and not 1")));
    }
    Ok(())
}

pub fn fit_normalizer(values: &[f64], method: NormalizationMethod) -> Result<NormalizationParams> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Value("non-finite input to normalizer".into()));
    }
    match method {
        NormalizationMethod::MinMax => {
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max <= min {
                return Err(Error::DegenerateScale("min-max on constant input".into()));
            }
            Ok(NormalizationParams::MinMax { min, max })
        }
        NormalizationMethod::ZScore => {
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let std = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
            if std <= 0.0 {
                return Err(Error::DegenerateScale("z-score with zero standard deviation".into()));
            }
            Ok(NormalizationParams::ZScore { mean, std })
        }
        NormalizationMethod::Robust => {
            let mut sorted = values.to_vec();
            sorted.sort_by(f64::total_cmp);
            let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
            if iqr <= 0.0 {
                return Err(Error::DegenerateScale("robust scaling with zero interquartile range".into()));
            }
            Ok(NormalizationParams::Robust { median: quantile_sorted(&sorted, 0.5), iqr })
        }
        NormalizationMethod::Log { base } => {
            check_log_base(base)?;
            if let Some(bad) = values.iter().find(|&&v| v <= 0.0) {
                return Err(Error::Domain(format!("log of non-positive value {bad}")));
            }
            Ok(NormalizationParams::Log { base })
        }
    }
}

impl NormalizationParams {
    pub fn apply(&self, x: f64) -> Result<f64> {
        Ok(match *self {
            NormalizationParams::MinMax { min, max } => (x - min) / (max - min),
            NormalizationParams::ZScore { mean, std } => (x - mean) / std,
            NormalizationParams::Robust { median, iqr } => (x - median) / iqr,
            NormalizationParams::Log { base } => {
                check_log_base(base)?;
                if x <= 0.0 {
                    return Err(Error::Domain(format!("log of non-positive value {x}")));
                }
                x.ln() / base.ln()
            }
        })
    }

    /// Map a normalized value back to the original scale.
    pub fn invert(&self, y: f64) -> f64 {
        match *self {
            NormalizationParams::MinMax { min, max } => y * (max - min) + min,
            NormalizationParams::ZScore { mean, std } => y * std + mean,
            NormalizationParams::Robust { median, iqr } => y * iqr + median,
            NormalizationParams::Log { base } => base.powf(y),
        }
    }
}

pub fn apply_normalizer(params: &NormalizationParams, x: f64) -> Result<f64> {
    params.apply(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    User,
    Item,
}

/// A rating matrix with each user's (or item's) mean subtracted.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredMatrix {
    pub matrix: SparseRatingMatrix,
    pub axis: Axis,
    /// Mean per row (user axis) or column (item axis); 0 for empty axes.
    pub means: Vec<f64>,
}

impl CenteredMatrix {
    /// Add the means back.
    pub fn decenter(&self) -> SparseRatingMatrix {
        let m = &self.matrix;
        let cells = m.flatten().into_iter().map(|(u, i, r)| {
            let mean = match self.axis {
                Axis::User => self.means[u],
                Axis::Item => self.means[i],
            };
            (u, i, r + mean)
        });
        SparseRatingMatrix::from_triplets(m.n_users(), m.n_items(), cells).expect("same shape as source")
    }
}

pub fn per_axis_center(matrix: &SparseRatingMatrix, axis: Axis) -> CenteredMatrix {
    let means: Vec<f64> = match axis {
        Axis::User => (0..matrix.n_users()).map(|u| matrix.row_mean(u).unwrap_or(0.0)).collect(),
        Axis::Item => (0..matrix.n_items()).map(|i| matrix.col_mean(i).unwrap_or(0.0)).collect(),
    };
    let cells = matrix.flatten().into_iter().map(|(u, i, r)| {
        let mean = match axis {
            Axis::User => means[u],
            Axis::Item => means[i],
        };
        (u, i, r - mean)
    });
    let centered = SparseRatingMatrix::from_triplets(matrix.n_users(), matrix.n_items(), cells)
        .expect("same shape as source");
    CenteredMatrix { matrix: centered, axis, means }
}

/// Indicator vector of `value` within `vocabulary`.
pub fn one_hot_encode<T: PartialEq + std::fmt::Debug>(value: &T, vocabulary: &[T]) -> Result<Vec<f64>> {
    let pos = vocabulary
        .iter()
        .position(|v| v == value)
        .ok_or_else(|| Error::UnknownCategory(format!("{value:?}")))?;
    let mut out = vec![0.0; vocabulary.len()];
    out[pos] = 1.0;
    Ok(out)
}

/// Per-user behavioral features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserFeatures {
    pub user: usize,
    pub user_id: u64,
    pub mean_rating: f64,
    pub rating_count: usize,
    pub last_activity: i64,
}

impl UserFeatures {
    pub fn as_vector(&self) -> [f64; 3] {
        [self.mean_rating, self.rating_count as f64, self.last_activity as f64]
    }
}

/// One row per user with at least one interaction, in dense-id order.
pub fn derive_user_features(dataset: &RatingDataset) -> Result<Vec<UserFeatures>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = dataset.n_users();
    let mut sums = vec![0.0; n];
    let mut counts = vec![0usize; n];
    let mut last = vec![i64::MIN; n];
    for (&(u, _), x) in dataset.dense_pairs().iter().zip(dataset.interactions()) {
        sums[u] += x.rating;
        counts[u] += 1;
        last[u] = last[u].max(x.timestamp);
    }
    Ok((0..n)
        .filter(|&u| counts[u] > 0)
        .map(|u| UserFeatures {
            user: u,
            user_id: dataset.users().raw(u),
            mean_rating: sums[u] / counts[u] as f64,
            rating_count: counts[u],
            last_activity: last[u],
        })
        .collect())
}

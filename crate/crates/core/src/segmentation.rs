//! RFM customer segmentation: recency/frequency/monetary profiles, quintile
//! scores (1 = best), the six named segment patterns, and k-means over
//! standardised RFM vectors.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::TransactionLog;
use crate::rng::component_rng;

const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RfmScores {
    pub r: u8,
    pub f: u8,
    pub m: u8,
}

impl RfmScores {
    pub const fn new(r: u8, f: u8, m: u8) -> Self {
        Self { r, f, m }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfmProfile {
    pub customer_id: String,
    /// Whole days between the last purchase and the reference time.
    pub recency: i64,
    pub frequency: u64,
    pub monetary: f64,
    pub scores: Option<RfmScores>,
}

/// Per-customer RFM values relative to `reference_time` (seconds since the
/// epoch). Profiles come back ordered by customer id.
pub fn compute_rfm(log: &TransactionLog, reference_time: i64) -> Result<Vec<RfmProfile>> {
    if log.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut acc: BTreeMap<&str, (i64, u64, f64)> = BTreeMap::new();
    for t in &log.records {
        if t.timestamp > reference_time {
            return Err(Error::InvalidReference { reference: reference_time, timestamp: t.timestamp });
        }
        let e = acc.entry(t.customer_id.as_str()).or_insert((i64::MIN, 0, 0.0));
        e.0 = e.0.max(t.timestamp);
        e.1 += 1;
        e.2 += t.amount;
    }
    Ok(acc
        .into_iter()
        .map(|(id, (last, frequency, monetary))| RfmProfile {
            customer_id: id.to_string(),
            recency: (reference_time - last) / SECONDS_PER_DAY,
            frequency,
            monetary,
            scores: None,
        })
        .collect())
}

/// Outcome of quintile scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub profiles: Vec<RfmProfile>,
    /// Number of score buckets actually used: 5, or fewer with under 5 customers.
    pub buckets: u8,
    pub reduced: bool,
}

/// Bucket = 1 + ⌊b·q/n⌋ where b counts customers strictly better on the
/// attribute. Equal values therefore share the better bucket, and the score
/// depends only on ranks.
fn bucket_scores(values: &[f64], lower_is_better: bool, q: usize) -> Vec<u8> {
    let n = values.len();
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    values
        .iter()
        .map(|&v| {
            let better = if lower_is_better {
                sorted.partition_point(|&x| x < v)
            } else {
                n - sorted.partition_point(|&x| x <= v)
            };
            (1 + better * q / n) as u8
        })
        .collect()
}

pub fn score_quintiles(profiles: &[RfmProfile]) -> Scored {
    let n = profiles.len();
    let q = n.clamp(1, 5);
    let r = bucket_scores(&profiles.iter().map(|p| p.recency as f64).collect::<Vec<_>>(), true, q);
    let f = bucket_scores(&profiles.iter().map(|p| p.frequency as f64).collect::<Vec<_>>(), false, q);
    let m = bucket_scores(&profiles.iter().map(|p| p.monetary).collect::<Vec<_>>(), false, q);
    let profiles = profiles
        .iter()
        .enumerate()
        .map(|(k, p)| RfmProfile { scores: Some(RfmScores::new(r[k], f[k], m[k])), ..p.clone() })
        .collect();
    Scored { profiles, buckets: q as u8, reduced: q < 5 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Segment {
    pub name: &'static str,
    pub pattern: RfmScores,
    pub description: &'static str,
}

/// The six exemplar patterns, most to least valuable. The table is a lookup,
/// not a partition of the score space.
pub const SEGMENTS: [Segment; 6] = [
    Segment {
        name: "Best customers",
        pattern: RfmScores::new(1, 1, 1),
        description: "Bought most recently, most often, and spend the most.",
    },
    Segment {
        name: "Loyal customers",
        pattern: RfmScores::new(2, 2, 3),
        description: "Buy on a regular basis. Responsive to promotions.",
    },
    Segment {
        name: "Big spenders",
        pattern: RfmScores::new(1, 4, 1),
        description: "Spend big money but do so infrequently.",
    },
    Segment {
        name: "Almost lost",
        pattern: RfmScores::new(3, 2, 4),
        description: "Haven't purchased for some time but spent a lot when did.",
    },
    Segment {
        name: "Lost customers",
        pattern: RfmScores::new(4, 1, 5),
        description: "Haven't purchased for the longest time, but spent a lot when they did.",
    },
    Segment {
        name: "Inactive customers",
        pattern: RfmScores::new(5, 5, 5),
        description: "Last purchased a long time ago and spent little.",
    },
];

pub const UNLABELED: &str = "Unlabeled";

pub fn assign_segment(scores: RfmScores) -> Option<&'static Segment> {
    SEGMENTS.iter().find(|s| s.pattern == scores)
}

/// Segment name for a scored profile, or [`UNLABELED`].
pub fn segment_name(profile: &RfmProfile) -> &'static str {
    profile.scores.and_then(assign_segment).map_or(UNLABELED, |s| s.name)
}

/// CSV with header `customer_id,recency,frequency,monetary,r,f,m,segment`.
pub fn write_segment_report<W: Write>(profiles: &[RfmProfile], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["customer_id", "recency", "frequency", "monetary", "r", "f", "m", "segment"]).map_err(csv_err)?;
    for p in profiles {
        let s = p.scores.ok_or_else(|| Error::Value(format!("customer {} has not been scored", p.customer_id)))?;
        w.write_record([
            p.customer_id.clone(),
            p.recency.to_string(),
            p.frequency.to_string(),
            p.monetary.to_string(),
            s.r.to_string(),
            s.f.to_string(),
            s.m.to_string(),
            segment_name(p).to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Inertia after every assignment step.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm. Centroids start at `k` distinct points drawn uniformly
/// under `seed`; an emptied cluster keeps its previous centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iters: usize) -> Result<KMeansResult> {
    let mut distinct: Vec<&Vec<f64>> = Vec::new();
    for p in points {
        if !distinct.contains(&p) {
            distinct.push(p);
        }
    }
    if k == 0 || k > distinct.len() {
        return Err(Error::InvalidK(format!("k = {k} with {} distinct points", distinct.len())));
    }
    if max_iters == 0 {
        return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
    }
    let dim = points[0].len();
    let mut rng = component_rng(seed, "kmeans.init");
    let mut chosen = sample(&mut rng, distinct.len(), k).into_vec();
    chosen.sort_unstable();
    let mut centroids: Vec<Vec<f64>> = chosen.iter().map(|&c| distinct[c].clone()).collect();
    let mut assignments = vec![usize::MAX; points.len()];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let mut changed = false;
        let mut inertia = 0.0;
        for (p, a) in points.iter().zip(assignments.iter_mut()) {
            let (best, d) = centroids
                .iter()
                .enumerate()
                .map(|(c, cen)| (c, sq_dist(p, cen)))
                .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
            inertia += d;
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        trace.push(inertia);
        if !changed {
            converged = true;
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            sums[a].iter_mut().zip(p).for_each(|(s, x)| *s += x);
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    Ok(KMeansResult { assignments, centroids, inertia_trace: trace, iterations, converged })
}

/// Per-feature z-scores (population std; constant features become 0).
pub fn standardize(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let Some(first) = points.first() else { return Vec::new() };
    let n = points.len() as f64;
    let dim = first.len();
    let mean: Vec<f64> = (0..dim).map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n).collect();
    let std: Vec<f64> =
        (0..dim).map(|j| (points.iter().map(|p| (p[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt()).collect();
    points
        .iter()
        .map(|p| (0..dim).map(|j| if std[j] > 0.0 { (p[j] - mean[j]) / std[j] } else { 0.0 }).collect())
        .collect()
}

/// k-means on z-scored (recency, frequency, monetary) vectors.
pub fn kmeans_segment(profiles: &[RfmProfile], k: usize, seed: u64, max_iters: usize) -> Result<KMeansResult> {
    if profiles.is_empty() {
        return Err(Error::EmptyInput);
    }
    let raw: Vec<Vec<f64>> = profiles.iter().map(|p| vec![p.recency as f64, p.frequency as f64, p.monetary]).collect();
    kmeans(&standardize(&raw), k, seed, max_iters)
}

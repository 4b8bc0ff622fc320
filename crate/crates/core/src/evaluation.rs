//! Classification and ranking metrics, RMSE, catalog coverage, and the
//! model evaluation driver.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{rank_order, RatingDataset, RecommendationList};
use crate::error::{Error, Result};
use crate::model::Predictor;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl std::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

/// Precision, recall, F1 and accuracy. A metric whose denominator is zero is
/// reported as 0 and its name is listed in `degenerate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub degenerate: Vec<String>,
}

fn ratio(num: f64, den: f64, name: &str, degenerate: &mut Vec<String>) -> f64 {
    if den == 0.0 {
        degenerate.push(name.to_string());
        0.0
    } else {
        num / den
    }
}

pub fn classification_metrics(c: &ConfusionCounts) -> ClassificationMetrics {
    let mut degenerate = Vec::new();
    let (tp, fp, fn_, tn) = (c.tp as f64, c.fp as f64, c.fn_ as f64, c.tn as f64);
    let precision = ratio(tp, tp + fp, "precision", &mut degenerate);
    let recall = ratio(tp, tp + fn_, "recall", &mut degenerate);
    let f1 = ratio(2.0 * precision * recall, precision + recall, "f1", &mut degenerate);
    let accuracy = ratio(tp + tn, tp + fp + fn_ + tn, "accuracy", &mut degenerate);
    ClassificationMetrics { precision, recall, f1, accuracy, degenerate }
}

/// One user's ranked list with a relevance flag per position, plus the
/// number of relevant items the user has in total (ranked or not).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedJudgments {
    pub relevance: Vec<bool>,
    pub total_relevant: usize,
}

impl RankedJudgments {
    pub fn new(relevance: Vec<bool>, total_relevant: usize) -> Result<Self> {
        let flagged = relevance.iter().filter(|&&r| r).count();
        if flagged > total_relevant {
            return Err(Error::Value(format!("{flagged} relevant positions but only {total_relevant} relevant items")));
        }
        Ok(Self { relevance, total_relevant })
    }
}

/// Relevant items among the first `k` positions, divided by `k` even when the
/// list is shorter.
pub fn precision_at_k(judgments: &RankedJudgments, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidK("precision@k needs k >= 1".into()));
    }
    let hits = judgments.relevance.iter().take(k).filter(|&&r| r).count();
    Ok(hits as f64 / k as f64)
}

/// (1/|relevant|) Σ_k P@k · rel(k) over the list; `None` when the user has
/// no relevant items.
pub fn average_precision(judgments: &RankedJudgments) -> Option<f64> {
    if judgments.total_relevant == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (pos, &rel) in judgments.relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (pos + 1) as f64;
        }
    }
    Some(sum / judgments.total_relevant as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub value: f64,
    /// Users with at least one relevant item.
    pub users: usize,
    /// Users skipped for having no relevant items.
    pub excluded: usize,
    pub degenerate: bool,
}

/// Mean average precision over users that have relevant items.
pub fn map(all: &[RankedJudgments]) -> MapResult {
    let aps: Vec<f64> = all.iter().filter_map(average_precision).collect();
    let excluded = all.len() - aps.len();
    if aps.is_empty() {
        return MapResult { value: 0.0, users: 0, excluded, degenerate: true };
    }
    MapResult { value: aps.iter().sum::<f64>() / aps.len() as f64, users: aps.len(), excluded, degenerate: false }
}

/// Mann-Whitney form of the ROC area with midranks for tied scores.
pub fn auc_roc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension { expected: scores.len(), got: labels.len() });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Value("AUC scores must not be NaN".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // Positions start..end share the midrank of ranks start+1..=end.
        let midrank = (start + 1 + end) as f64 / 2.0;
        rank_sum += midrank * order[start..end].iter().filter(|&&p| labels[p]).count() as f64;
        start = end;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Root mean squared error over (predicted, actual) pairs.
pub fn rmse(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let sse: f64 = pairs.iter().map(|(p, a)| (p - a) * (p - a)).sum();
    Ok((sse / pairs.len() as f64).sqrt())
}

/// Distinct recommended items over the catalog size.
pub fn coverage<Id: Ord + Copy>(lists: &[RecommendationList<Id>], catalog_size: usize) -> Result<f64> {
    if catalog_size == 0 {
        return Err(Error::Value("catalog size must be at least 1".into()));
    }
    let distinct: BTreeSet<Id> = lists.iter().flat_map(|l| l.items.iter().map(|e| e.0)).collect();
    Ok(distinct.len() as f64 / catalog_size as f64)
}

/// Which items compete in a user's ranking.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateMode {
    /// Only the user's own test items.
    #[default]
    TestItems,
    /// Every item the model can score that the user did not rate in training.
    FullCatalog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Recommendation cutoff for the confusion counts and coverage.
    pub k: usize,
    /// Cutoffs reported as P@k.
    pub p_at_k: Vec<usize>,
    pub relevance_threshold: f64,
    pub candidates: CandidateMode,
    /// Echoed into the report; evaluation itself is deterministic.
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { k: 10, p_at_k: vec![1, 5, 10], relevance_threshold: 4.0, candidates: CandidateMode::TestItems, seed: 42 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.p_at_k.contains(&0) {
            return Err(Error::InvalidK("evaluation cutoffs must be >= 1".into()));
        }
        if !self.relevance_threshold.is_finite() {
            return Err(Error::InvalidConfig("relevance_threshold must be finite".into()));
        }
        Ok(())
    }
}

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub version: u32,
    pub k: usize,
    pub relevance_threshold: f64,
    pub candidates: CandidateMode,
    pub seed: u64,
    pub n_test: usize,
    pub users_evaluated: usize,
    /// Test users with no training history.
    pub cold_users: usize,
    /// Test interactions the model refused with a cold-start error.
    pub cold_pairs: usize,
    pub counts: ConfusionCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub p_at_k: BTreeMap<usize, f64>,
    pub map: f64,
    pub map_users: usize,
    pub auc: f64,
    pub auc_users: usize,
    pub rmse: f64,
    pub rmse_pairs: usize,
    pub coverage: f64,
    /// Metrics that fell back to 0 for lack of a defined value.
    pub degenerate: Vec<String>,
}

impl EvaluationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// One `key=value` line per field, in a fixed order.
    pub fn to_key_values(&self) -> String {
        let mut lines = vec![
            format!("version={}", self.version),
            format!("k={}", self.k),
            format!("relevance_threshold={}", self.relevance_threshold),
            format!("candidates={}", serde_json::to_value(self.candidates).unwrap_or_default().as_str().unwrap_or("")),
            format!("seed={}", self.seed),
            format!("n_test={}", self.n_test),
            format!("users_evaluated={}", self.users_evaluated),
            format!("cold_users={}", self.cold_users),
            format!("cold_pairs={}", self.cold_pairs),
            format!("tp={}", self.counts.tp),
            format!("fp={}", self.counts.fp),
            format!("fn={}", self.counts.fn_),
            format!("tn={}", self.counts.tn),
            format!("precision={}", self.precision),
            format!("recall={}", self.recall),
            format!("f1={}", self.f1),
            format!("accuracy={}", self.accuracy),
        ];
        lines.extend(self.p_at_k.iter().map(|(k, v)| format!("p_at_{k}={v}")));
        lines.extend([
            format!("map={}", self.map),
            format!("map_users={}", self.map_users),
            format!("auc={}", self.auc),
            format!("auc_users={}", self.auc_users),
            format!("rmse={}", self.rmse),
            format!("rmse_pairs={}", self.rmse_pairs),
            format!("coverage={}", self.coverage),
            format!("degenerate={}", self.degenerate.join(",")),
        ]);
        lines.join("\n") + "\n"
    }
}

/// Everything computed for one test user.
#[derive(Debug, Default)]
struct UserOutcome {
    counts: ConfusionCounts,
    judgments: Option<RankedJudgments>,
    auc: Option<f64>,
    squared_errors: Vec<(f64, f64)>,
    recommended: Vec<usize>,
    cold_pairs: usize,
}

/// Score `items` for `user`, dropping items the model reports as cold.
fn score_items(model: &dyn Predictor, user: usize, items: impl Iterator<Item = usize>) -> Result<(Vec<(usize, f64)>, usize)> {
    let mut scored = Vec::new();
    let mut cold = 0;
    for i in items {
        match model.predict(user, i) {
            Ok(s) => scored.push((i, s)),
            Err(e) if e.is_cold_start() => cold += 1,
            Err(e) => return Err(e),
        }
    }
    Ok((scored, cold))
}

/// Evaluate `model` on `test`. Relevance is `actual rating >= threshold`; the
/// recommendation list is the top `k` candidates by predicted score. Test
/// users with no training interactions are counted as cold and skipped.
pub fn evaluate(model: &dyn Predictor, train: &RatingDataset, test: &RatingDataset, config: &EvalConfig) -> Result<EvaluationReport> {
    config.validate()?;
    if test.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n_items = test.n_items();
    let mut train_items: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); train.n_users()];
    for &(u, i) in train.dense_pairs() {
        train_items[u].insert(i);
    }
    // user -> [(item, rating, timestamp)] in dense-item order
    let mut by_user: BTreeMap<usize, Vec<(usize, f64, i64)>> = BTreeMap::new();
    for (x, &(u, i)) in test.interactions().iter().zip(test.dense_pairs()) {
        by_user.entry(u).or_default().push((i, x.rating, x.timestamp));
    }
    let (warm, cold): (Vec<_>, Vec<_>) =
        by_user.into_iter().partition(|(u, _)| train_items.get(*u).is_some_and(|s| !s.is_empty()));

    let outcomes: Vec<UserOutcome> = warm
        .par_iter()
        .map(|(u, tests)| evaluate_user(model, *u, tests, &train_items[*u], n_items, config))
        .collect::<Result<_>>()?;

    let mut counts = ConfusionCounts::default();
    let mut judgments = Vec::new();
    let mut aucs = Vec::new();
    let mut pairs = Vec::new();
    let mut lists = Vec::new();
    let mut cold_pairs = 0;
    for (o, (u, _)) in outcomes.into_iter().zip(&warm) {
        counts += o.counts;
        judgments.extend(o.judgments);
        aucs.extend(o.auc);
        pairs.extend(o.squared_errors);
        lists.push(RecommendationList { user: *u, items: o.recommended.into_iter().map(|i| (i, 0.0)).collect() });
        cold_pairs += o.cold_pairs;
    }
    let cls = classification_metrics(&counts);
    let mut degenerate = cls.degenerate.clone();
    let users = judgments.len();
    let p_at_k: BTreeMap<usize, f64> = config
        .p_at_k
        .iter()
        .map(|&k| {
            let total: f64 = judgments.iter().map(|j| precision_at_k(j, k).expect("k validated")).sum();
            (k, if users == 0 { 0.0 } else { total / users as f64 })
        })
        .collect();
    if users == 0 {
        degenerate.push("p_at_k".into());
    }
    let m = map(&judgments);
    if m.degenerate {
        degenerate.push("map".into());
    }
    let auc = if aucs.is_empty() {
        degenerate.push("auc".into());
        0.0
    } else {
        aucs.iter().sum::<f64>() / aucs.len() as f64
    };
    let rmse_value = match rmse(&pairs) {
        Ok(v) => v,
        Err(_) => {
            degenerate.push("rmse".into());
            0.0
        }
    };
    Ok(EvaluationReport {
        version: REPORT_VERSION,
        k: config.k,
        relevance_threshold: config.relevance_threshold,
        candidates: config.candidates,
        seed: config.seed,
        n_test: test.len(),
        users_evaluated: users,
        cold_users: cold.len(),
        cold_pairs,
        counts,
        precision: cls.precision,
        recall: cls.recall,
        f1: cls.f1,
        accuracy: cls.accuracy,
        p_at_k,
        map: m.value,
        map_users: m.users,
        auc,
        auc_users: aucs.len(),
        rmse: rmse_value,
        rmse_pairs: pairs.len(),
        coverage: coverage(&lists, n_items)?,
        degenerate,
    })
}

fn evaluate_user(
    model: &dyn Predictor,
    user: usize,
    tests: &[(usize, f64, i64)],
    train_items: &BTreeSet<usize>,
    n_items: usize,
    config: &EvalConfig,
) -> Result<UserOutcome> {
    let mut out = UserOutcome::default();
    let relevant: BTreeSet<usize> =
        tests.iter().filter(|t| t.1 >= config.relevance_threshold).map(|t| t.0).collect();

    for &(i, r, ts) in tests {
        match model.predict_at(user, i, Some(ts)) {
            Ok(p) => out.squared_errors.push((p, r)),
            Err(e) if e.is_cold_start() => out.cold_pairs += 1,
            Err(e) => return Err(e),
        }
    }

    let (mut ranked, _) = match config.candidates {
        CandidateMode::TestItems => score_items(model, user, tests.iter().map(|t| t.0))?,
        CandidateMode::FullCatalog => score_items(model, user, (0..n_items).filter(|i| !train_items.contains(i)))?,
    };
    ranked.sort_by(rank_order);
    let flags: Vec<bool> = ranked.iter().map(|(i, _)| relevant.contains(i)).collect();
    let k = config.k.min(ranked.len());
    let tp = flags[..k].iter().filter(|&&f| f).count() as u64;
    let fp = k as u64 - tp;
    let fn_ = relevant.len() as u64 - tp;
    let negatives = (ranked.len() - k) as u64 - flags[k..].iter().filter(|&&f| f).count() as u64;
    out.counts = ConfusionCounts { tp, fp, fn_, tn: negatives };
    out.recommended = ranked[..k].iter().map(|e| e.0).collect();
    let scores: Vec<f64> = ranked.iter().map(|e| e.1).collect();
    out.auc = auc_roc(&scores, &flags).ok();
    out.judgments = Some(RankedJudgments { relevance: flags, total_relevant: relevant.len() });
    Ok(out)
}

/// Top-`k` items for `user` over the whole catalog, optionally leaving out
/// items the user rated in `train`. Items the model cannot score are skipped.
pub fn recommend(
    model: &dyn Predictor,
    train: &RatingDataset,
    user: usize,
    k: usize,
    exclude_rated: bool,
) -> Result<RecommendationList> {
    let rated: std::collections::HashSet<usize> = if exclude_rated {
        train.dense_pairs().iter().filter(|p| p.0 == user).map(|p| p.1).collect()
    } else {
        Default::default()
    };
    let (scored, _) = score_items(model, user, 0..train.n_items())?;
    if scored.is_empty() {
        return Err(Error::cold_user(user));
    }
    crate::data::top_k(user, scored, k, &rated)
}

//! Readers and writers for MovieLens-100K files and transaction logs, plus
//! descriptive statistics over a rating dataset.

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};

use chrono::DateTime;
use serde::{Deserialize, Serialize};

use crate::data::{global_mean, Interaction, RatingDataset, RatingScale};
use crate::error::{Error, Result};

/// Number of genre flags at the end of each `u.item` line.
pub const MOVIELENS_GENRES: usize = 19;

pub const MOVIELENS_GENRE_NAMES: [&str; MOVIELENS_GENRES] = [
    "unknown", "Action", "Adventure", "Animation", "Children's", "Comedy", "Crime", "Documentary",
    "Drama", "Fantasy", "Film-Noir", "Horror", "Musical", "Mystery", "Romance", "Sci-Fi",
    "Thriller", "War", "Western",
];

/// Parse `user<TAB>item<TAB>rating<TAB>timestamp` lines. Blank lines are skipped.
pub fn parse_ratings<R: BufRead>(reader: R, scale: RatingScale) -> Result<RatingDataset> {
    let mut interactions = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::parse(line_no, format!("expected 4 tab-separated fields, found {}", fields.len())));
        }
        let user_id = parse_field::<u64>(fields[0], "user id", line_no)?;
        let item_id = parse_field::<u64>(fields[1], "item id", line_no)?;
        let rating = parse_field::<f64>(fields[2], "rating", line_no)?;
        let timestamp = parse_field::<i64>(fields[3], "timestamp", line_no)?;
        interactions.push(Interaction { user_id, item_id, rating, timestamp });
    }
    if interactions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    RatingDataset::new(interactions, scale)
}

fn parse_field<T: std::str::FromStr>(text: &str, what: &str, line: usize) -> Result<T> {
    text.trim().parse().map_err(|_| Error::parse(line, format!("bad {what} {text:?}")))
}

/// Write `dataset` back in the tab-separated ratings layout.
pub fn write_ratings<W: Write>(dataset: &RatingDataset, mut writer: W) -> Result<()> {
    for x in dataset.interactions() {
        writeln!(writer, "{}\t{}\t{}\t{}", x.user_id, x.item_id, x.rating, x.timestamp)?;
    }
    Ok(())
}

/// Attribute vector for one catalog item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemFeatures {
    pub item_id: u64,
    pub features: Vec<f64>,
    pub title: Option<String>,
    pub release_year: Option<i32>,
}

/// Items with equal-length feature vectors, addressable by raw id.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Catalog {
    items: Vec<ItemFeatures>,
    by_id: BTreeMap<u64, usize>,
    feature_len: usize,
}

impl Catalog {
    pub fn new(items: Vec<ItemFeatures>) -> Result<Self> {
        let feature_len = items.first().map_or(0, |x| x.features.len());
        let mut by_id = BTreeMap::new();
        for (pos, item) in items.iter().enumerate() {
            if item.features.len() != feature_len {
                return Err(Error::Dimension { expected: feature_len, got: item.features.len() });
            }
            if by_id.insert(item.item_id, pos).is_some() {
                return Err(Error::Value(format!("item {} listed twice", item.item_id)));
            }
        }
        Ok(Self { items, by_id, feature_len })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn feature_len(&self) -> usize {
        self.feature_len
    }

    pub fn get(&self, item_id: u64) -> Option<&ItemFeatures> {
        self.by_id.get(&item_id).map(|&pos| &self.items[pos])
    }

    pub fn items(&self) -> &[ItemFeatures] {
        &self.items
    }
}

/// Parse pipe-separated `u.item` lines whose last 19 fields are 0/1 genre
/// flags. Titles tolerate invalid bytes (replaced, never fatal).
pub fn parse_items<R: Read>(mut reader: R) -> Result<Catalog> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let mut items = Vec::new();
    for (n, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let line_no = n + 1;
        let text = String::from_utf8_lossy(raw);
        let line = text.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('|').collect();
        if fields.len() < MOVIELENS_GENRES + 1 {
            return Err(Error::parse(
                line_no,
                format!("expected an id and {MOVIELENS_GENRES} genre flags, found {} fields", fields.len()),
            ));
        }
        let item_id = parse_field::<u64>(fields[0], "item id", line_no)?;
        let flag_start = fields.len() - MOVIELENS_GENRES;
        let features = fields[flag_start..]
            .iter()
            .map(|f| match f.trim() {
                "0" => Ok(0.0),
                "1" => Ok(1.0),
                other => Err(Error::parse(line_no, format!("genre flag {other:?} is not 0 or 1"))),
            })
            .collect::<Result<Vec<f64>>>()?;
        let title = (flag_start > 1).then(|| fields[1].to_string()).filter(|t| !t.is_empty());
        let release_year = fields
            .get(2)
            .filter(|_| flag_start > 2)
            .and_then(|date| year_suffix(date))
            .or_else(|| title.as_deref().and_then(year_in_title));
        items.push(ItemFeatures { item_id, features, title, release_year });
    }
    Catalog::new(items)
}

/// "01-Jan-1995" -> 1995
fn year_suffix(date: &str) -> Option<i32> {
    let date = date.trim();
    date.get(date.len().checked_sub(4)?..)?.parse().ok()
}

/// "Toy Story (1995)" -> 1995
fn year_in_title(title: &str) -> Option<i32> {
    let open = title.rfind('(')?;
    let close = title[open..].find(')')? + open;
    title[open + 1..close].parse().ok()
}

/// One purchase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub customer_id: String,
    pub timestamp: i64,
    pub amount: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransactionLog {
    pub records: Vec<Transaction>,
}

impl TransactionLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Parse a `customer_id,timestamp,amount` CSV. Timestamps may be integer
/// epoch seconds or RFC 3339.
pub fn parse_transactions<R: Read>(reader: R) -> Result<TransactionLog> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = csv
        .headers()
        .map_err(|e| Error::parse(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect::<Vec<_>>();
    if headers != ["customer_id", "timestamp", "amount"] {
        return Err(Error::parse(1, format!("expected header customer_id,timestamp,amount, found {}", headers.join(","))));
    }
    let mut records = Vec::new();
    for (n, row) in csv.records().enumerate() {
        let line_no = n + 2;
        let row = row.map_err(|e| Error::parse(line_no, e.to_string()))?;
        if row.len() != 3 {
            return Err(Error::parse(line_no, format!("expected 3 fields, found {}", row.len())));
        }
        let timestamp = parse_timestamp(&row[1]).ok_or_else(|| Error::parse(line_no, format!("bad timestamp {:?}", &row[1])))?;
        let amount: f64 = row[2].parse().map_err(|_| Error::parse(line_no, format!("bad amount {:?}", &row[2])))?;
        if !amount.is_finite() || amount < 0.0 {
            return Err(Error::Value(format!("line {line_no}: amount {amount} is negative")));
        }
        records.push(Transaction { customer_id: row[0].to_string(), timestamp, amount });
    }
    Ok(TransactionLog { records })
}

pub fn parse_timestamp(text: &str) -> Option<i64> {
    text.parse::<i64>()
        .ok()
        .or_else(|| DateTime::parse_from_rfc3339(text).ok().map(|t| t.timestamp()))
}

/// Mean, median and population standard deviation of one numeric field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSummary {
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl FieldSummary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(Self {
            mean,
            median: crate::preprocess::quantile_sorted(&sorted, 0.5),
            std: var.sqrt(),
            min: sorted[0],
            max: sorted[sorted.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub n_interactions: usize,
    pub n_users: usize,
    pub n_items: usize,
    pub rating: FieldSummary,
    pub ratings_per_user: FieldSummary,
    pub ratings_per_item: FieldSummary,
    /// Count of each distinct rating value, keyed by its text form.
    pub rating_counts: BTreeMap<String, usize>,
    pub sparsity: f64,
}

impl StatsSummary {
    /// `key=value` lines in a fixed order.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        put("interactions", self.n_interactions.to_string());
        put("users", self.n_users.to_string());
        put("items", self.n_items.to_string());
        put("rating.mean", self.rating.mean.to_string());
        put("rating.median", self.rating.median.to_string());
        put("rating.std", self.rating.std.to_string());
        put("ratings_per_user.mean", self.ratings_per_user.mean.to_string());
        put("ratings_per_user.median", self.ratings_per_user.median.to_string());
        put("ratings_per_item.mean", self.ratings_per_item.mean.to_string());
        put("ratings_per_item.median", self.ratings_per_item.median.to_string());
        for (value, count) in &self.rating_counts {
            put(&format!("rating_count.{value}"), count.to_string());
        }
        put("sparsity", self.sparsity.to_string());
        out
    }
}

pub fn dataset_stats(dataset: &RatingDataset) -> Result<StatsSummary> {
    let mean = global_mean(dataset)?;
    let ratings: Vec<f64> = dataset.ratings().collect();
    let mut rating = FieldSummary::of(&ratings).ok_or(Error::EmptyDataset)?;
    rating.mean = mean;

    let per_user: Vec<f64> = dataset.user_counts().into_iter().filter(|&c| c > 0).map(|c| c as f64).collect();
    let per_item: Vec<f64> = dataset.item_counts().into_iter().filter(|&c| c > 0).map(|c| c as f64).collect();

    let mut rating_counts = BTreeMap::new();
    for r in &ratings {
        *rating_counts.entry(r.to_string()).or_insert(0) += 1;
    }

    let cells = dataset.n_users() as f64 * dataset.n_items() as f64;
    Ok(StatsSummary {
        n_interactions: dataset.len(),
        n_users: dataset.n_users(),
        n_items: dataset.n_items(),
        rating,
        ratings_per_user: FieldSummary::of(&per_user).ok_or(Error::EmptyDataset)?,
        ratings_per_item: FieldSummary::of(&per_item).ok_or(Error::EmptyDataset)?,
        rating_counts,
        sparsity: 1.0 - dataset.len() as f64 / cells,
    })
}

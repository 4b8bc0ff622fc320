#![allow(dead_code)]

use std::collections::BTreeMap;

use proptest::prelude::*;
use reckit_core::{Interaction, RatingDataset, RatingScale};

/// Random star-rated datasets with distinct (user, item) pairs.
pub fn dataset(max_users: u64, max_items: u64, max_len: usize) -> impl Strategy<Value = RatingDataset> {
    prop::collection::vec((0..max_users, 0..max_items, 1..=5u8, 0..1000i64), 1..max_len).prop_map(|rows| {
        let unique: BTreeMap<(u64, u64), (u8, i64)> = rows.into_iter().map(|(u, i, r, t)| ((u, i), (r, t))).collect();
        let xs = unique.into_iter().map(|((u, i), (r, t))| Interaction::new(u, i, r as f64, t)).collect();
        RatingDataset::new(xs, RatingScale::STARS).unwrap()
    })
}

pub fn ds(rows: &[(u64, u64, f64)]) -> RatingDataset {
    let xs = rows.iter().enumerate().map(|(t, &(u, i, r))| Interaction::new(u, i, r, t as i64)).collect();
    RatingDataset::new(xs, RatingScale::STARS).unwrap()
}

pub type Key = (u64, u64, u64, i64);

pub fn keys(d: &RatingDataset) -> Vec<Key> {
    d.interactions().iter().map(|x| (x.user_id, x.item_id, x.rating.to_bits(), x.timestamp)).collect()
}

pub fn sorted_keys(d: &RatingDataset) -> Vec<Key> {
    let mut k = keys(d);
    k.sort_unstable();
    k
}

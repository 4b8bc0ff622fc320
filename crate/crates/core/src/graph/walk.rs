//! Item co-consumption graph and random-walk co-occurrence similarity.

use std::collections::HashMap;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::RatingDataset;
use crate::error::{Error, Result};
use crate::preprocess::Axis;
use crate::rng::{derive_indexed, rng_from};
use crate::similarity::SimilarityMatrix;

/// Undirected item graph; edge weight = number of users who liked both ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionGraph {
    /// Per node, (neighbour, weight) with ascending neighbour.
    adjacency: Vec<Vec<(usize, u32)>>,
}

impl InteractionGraph {
    /// Build from an undirected edge list. Self-loops, zero weights and
    /// repeated edges are rejected.
    pub fn from_edges(n_nodes: usize, edges: &[(usize, usize, u32)]) -> Result<Self> {
        let mut adjacency = vec![Vec::new(); n_nodes];
        for &(a, b, w) in edges {
            if a == b || w == 0 || a >= n_nodes || b >= n_nodes {
                return Err(Error::Value(format!("invalid edge ({a}, {b}) with weight {w}")));
            }
            adjacency[a].push((b, w));
            adjacency[b].push((a, w));
        }
        for row in &mut adjacency {
            row.sort_unstable();
            if row.windows(2).any(|p| p[0].0 == p[1].0) {
                return Err(Error::Value("repeated edge".into()));
            }
        }
        Ok(Self { adjacency })
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.len()
    }

    pub fn n_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn neighbors(&self, node: usize) -> &[(usize, u32)] {
        &self.adjacency[node]
    }

    pub fn weight(&self, a: usize, b: usize) -> u32 {
        let row = &self.adjacency[a];
        row.binary_search_by_key(&b, |e| e.0).map_or(0, |p| row[p].1)
    }

    /// All edges as (a, b, weight) with a < b, in ascending order.
    pub fn edges(&self) -> Vec<(usize, usize, u32)> {
        let mut out = Vec::new();
        for (a, row) in self.adjacency.iter().enumerate() {
            out.extend(row.iter().filter(|e| e.0 > a).map(|&(b, w)| (a, b, w)));
        }
        out
    }
}

/// Connect every pair of items some user rated at or above `like_threshold`.
/// Nodes are the dataset's dense item indices.
pub fn build_graph(dataset: &RatingDataset, like_threshold: f64) -> Result<InteractionGraph> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut liked: Vec<Vec<usize>> = vec![Vec::new(); dataset.n_users()];
    for (x, &(u, i)) in dataset.interactions().iter().zip(dataset.dense_pairs()) {
        if x.rating >= like_threshold {
            liked[u].push(i);
        }
    }
    let mut counts: HashMap<(usize, usize), u32> = HashMap::new();
    for items in &mut liked {
        items.sort_unstable();
        for (p, &a) in items.iter().enumerate() {
            for &b in &items[p + 1..] {
                *counts.entry((a, b)).or_insert(0) += 1;
            }
        }
    }
    let mut edges: Vec<(usize, usize, u32)> = counts.into_iter().map(|((a, b), w)| (a, b, w)).collect();
    edges.sort_unstable();
    InteractionGraph::from_edges(dataset.n_items(), &edges)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkConfig {
    /// Nodes per walk including the seed node, so a walk takes `walk_length - 1` steps.
    pub walk_length: usize,
    pub walks_per_seed: usize,
    pub seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        Self { walk_length: 4, walks_per_seed: 1000, seed: 42 }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.walk_length < 2 {
            return Err(Error::InvalidConfig(format!("walk_length must be >= 2, got {}", self.walk_length)));
        }
        if self.walks_per_seed == 0 {
            return Err(Error::InvalidConfig("walks_per_seed must be >= 1".into()));
        }
        Ok(())
    }
}

/// Sim(i, j) = (walks seeded at i that visit j at least once) / (walks seeded at i).
/// Steps pick a neighbour with probability proportional to edge weight. The
/// seed node itself is never counted. Each seed node draws from its own
/// generator derived from (seed, node), so the result does not depend on
/// thread scheduling.
pub fn rw_similarity(graph: &InteractionGraph, config: &WalkConfig) -> Result<SimilarityMatrix> {
    config.validate()?;
    if graph.n_edges() == 0 {
        return Err(Error::EmptyInput);
    }
    let cumulative: Vec<Vec<u64>> = graph
        .adjacency
        .iter()
        .map(|row| {
            row.iter()
                .scan(0u64, |acc, e| {
                    *acc += u64::from(e.1);
                    Some(*acc)
                })
                .collect()
        })
        .collect();
    let n = graph.n_nodes();
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|start| {
            if graph.adjacency[start].is_empty() {
                return Vec::new();
            }
            let mut rng = rng_from(derive_indexed(config.seed, "walk", start as u64));
            let mut hits = vec![0u32; n];
            let mut stamp = vec![usize::MAX; n];
            for walk in 0..config.walks_per_seed {
                let mut node = start;
                for _ in 1..config.walk_length {
                    let cum = &cumulative[node];
                    let total = *cum.last().expect("walks only continue from nodes with edges");
                    let r = rng.random_range(0..total);
                    node = graph.adjacency[node][cum.partition_point(|&c| c <= r)].0;
                    if node != start && stamp[node] != walk {
                        stamp[node] = walk;
                        hits[node] += 1;
                    }
                }
            }
            let total = config.walks_per_seed as f64;
            hits.iter().enumerate().filter(|(_, &h)| h > 0).map(|(j, &h)| (j, f64::from(h) / total)).collect()
        })
        .collect();
    SimilarityMatrix::from_rows(Axis::Item, rows, vec![0.0; n])
}

//! Synthetic workloads for the benchmarks.
//!
//! Ratings come from a planted low-rank model plus noise, rounded onto the
//! 1-5 star grid, so the factor models have real structure to find.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use reckit_core::ingest::{Transaction, TransactionLog};
use reckit_core::{Interaction, RatingDataset, RatingScale};

#[derive(Debug, Clone, Copy)]
pub struct SyntheticRatings {
    pub users: usize,
    pub items: usize,
    /// Expected fraction of cells observed.
    pub density: f64,
    pub rank: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticRatings {
    fn default() -> Self {
        Self { users: 500, items: 400, density: 0.05, rank: 4, noise: 0.3, seed: 7 }
    }
}

impl SyntheticRatings {
    pub fn generate(&self) -> RatingDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let unit = Normal::new(0.0, 1.0 / (self.rank as f64).sqrt()).expect("valid normal");
        let noise = Normal::new(0.0, self.noise).expect("valid normal");
        let mut draw = |n: usize| -> Vec<Vec<f64>> {
            (0..n).map(|_| (0..self.rank).map(|_| unit.sample(&mut rng)).collect()).collect()
        };
        let (p, q) = (draw(self.users), draw(self.items));
        let mut xs = Vec::new();
        for (u, pu) in p.iter().enumerate() {
            for (i, qi) in q.iter().enumerate() {
                if rng.random_bool(self.density) {
                    let dot: f64 = pu.iter().zip(qi).map(|(a, b)| a * b).sum();
                    let r = (3.0 + 1.5 * dot + noise.sample(&mut rng)).round().clamp(1.0, 5.0);
                    xs.push(Interaction::new(u as u64 + 1, i as u64 + 1, r, 880_000_000 + rng.random_range(0..10_000_000)));
                }
            }
        }
        RatingDataset::new(xs, RatingScale::STARS).expect("generated pairs are unique")
    }
}

/// `customers` purchase histories with geometric-ish frequencies and
/// lognormal-ish amounts over the year before `reference`.
pub fn synthetic_transactions(customers: usize, reference: i64, seed: u64) -> TransactionLog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spend = Normal::new(3.0f64, 0.8).expect("valid normal");
    let mut records = Vec::new();
    for c in 0..customers {
        let visits = 1 + (rng.random::<f64>().powi(3) * 40.0) as usize;
        for _ in 0..visits {
            records.push(Transaction {
                customer_id: format!("c{c:06}"),
                timestamp: reference - rng.random_range(0..365 * 86_400),
                amount: spend.sample(&mut rng).exp(),
            });
        }
    }
    TransactionLog { records }
}

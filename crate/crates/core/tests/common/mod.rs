#![allow(dead_code)]

use offline_pricing::identification::Band;
use offline_pricing::{DemandBounds, PricingModel};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

/// Optimal prices a*_t(x) for x = 1..=15 (rows) and t = 1..=4 (columns) of
/// the benchmark model.
pub const OPTIMAL_PRICES: [[u32; 4]; 15] = [
    [10, 10, 10, 10],
    [10, 10, 10, 9],
    [10, 10, 10, 9],
    [10, 10, 10, 8],
    [10, 10, 10, 8],
    [10, 10, 9, 8],
    [10, 10, 9, 8],
    [10, 10, 9, 8],
    [10, 9, 9, 8],
    [10, 9, 8, 8],
    [10, 9, 8, 8],
    [10, 9, 8, 8],
    [9, 9, 8, 8],
    [9, 8, 8, 8],
    [9, 8, 8, 8],
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random model with `k` prices and rates non-increasing in price.
pub fn random_model(r: &mut ChaCha8Rng, horizon: usize, max_inventory: usize, k: usize) -> PricingModel {
    let mut prices: Vec<f64> = Vec::with_capacity(k);
    let mut p = r.gen_range(1.0..10.0);
    for _ in 0..k {
        prices.push(p);
        p += r.gen_range(0.5..4.0);
    }
    let lambda = (0..horizon)
        .map(|_| {
            let mut l: f64 = r.gen_range(3.0..9.0);
            (0..k)
                .map(|_| {
                    let cur = l;
                    l = (l - r.gen_range(0.0..2.5)).max(1.0);
                    cur
                })
                .collect()
        })
        .collect();
    PricingModel::new(horizon, max_inventory, prices, lambda, 1.0, 10.0).unwrap()
}

pub fn random_band(r: &mut ChaCha8Rng, bounds: DemandBounds) -> Band {
    let a = r.gen_range(bounds.lambda_min..bounds.lambda_max);
    let b = r.gen_range(bounds.lambda_min..bounds.lambda_max);
    Band { lower: a.min(b), upper: a.max(b) }
}

/// Three ascending prices with monotone bands and one unobserved price.
pub struct StaticFixture {
    pub prices: Vec<f64>,
    pub bands: Vec<Option<Band>>,
    pub bounds: DemandBounds,
}

pub fn random_static_fixture(r: &mut ChaCha8Rng, hidden: usize) -> StaticFixture {
    let lambda_max = r.gen_range(6.0..10.0);
    let bounds = DemandBounds::new(1.0, lambda_max).unwrap();
    let a3 = r.gen_range(2.0..10.0);
    let a2 = a3 + r.gen_range(0.2..4.0);
    let a1 = a2 + r.gen_range(0.2..4.0);
    let mut lows: Vec<f64> = (0..3).map(|_| r.gen_range(1.0..lambda_max)).collect();
    let mut highs: Vec<f64> = (0..3).map(|_| r.gen_range(1.0..lambda_max)).collect();
    lows.sort_by(|a, b| b.total_cmp(a));
    highs.sort_by(|a, b| b.total_cmp(a));
    let bands = (0..3)
        .map(|i| {
            (i != hidden).then(|| Band { lower: lows[i].min(highs[i]), upper: lows[i].max(highs[i]) })
        })
        .collect();
    StaticFixture { prices: vec![a3, a2, a1], bands, bounds }
}

/// Minimax-regret choice with unlimited stock, computed from scratch:
/// revenue `a * lambda`, intervals pooled over neighbours, ties to the
/// higher price.
pub fn brute_force_static_choice(f: &StaticFixture) -> usize {
    let k = f.prices.len();
    let lower: Vec<f64> = (0..k)
        .map(|i| (i..k).filter_map(|j| f.bands[j].map(|b| b.lower)).fold(f.bounds.lambda_min, f64::max))
        .collect();
    let upper: Vec<f64> = (0..k)
        .map(|i| (0..=i).filter_map(|j| f.bands[j].map(|b| b.upper)).fold(f.bounds.lambda_max, f64::min))
        .collect();
    let regret: Vec<f64> = (0..k)
        .map(|i| {
            let rival = (0..k).filter(|&j| j != i).map(|j| f.prices[j] * upper[j]).fold(f64::NEG_INFINITY, f64::max);
            (rival - f.prices[i] * lower[i]).max(0.0)
        })
        .collect();
    let mut best = 0;
    for i in 1..k {
        if regret[i] <= regret[best] {
            best = i;
        }
    }
    best
}

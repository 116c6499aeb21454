//! Reproducible offline datasets generated under behavior policies.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::mdp::{check_lambda, price_index, solve_optimal, solve_worst, PolicyTable, PricingModel};

/// Counter-addressed randomness. Every (replication, trajectory, period)
/// triple owns an independent ChaCha8 stream keyed directly by the triple, so
/// draws never depend on generation order or thread scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeededRng {
    seed: u64,
}

const DATA_DOMAIN: u64 = 0;
const EVAL_DOMAIN: u64 = 1 << 63;

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn keyed(&self, words: [u64; 3]) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        for (i, w) in words.iter().enumerate() {
            key[8 * (i + 1)..8 * (i + 2)].copy_from_slice(&w.to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }

    /// Stream for one step of one logged trajectory.
    pub fn stream(&self, replication: u64, trajectory: u64, period: u64) -> ChaCha8Rng {
        self.keyed([DATA_DOMAIN | replication, trajectory, period])
    }

    /// Stream for one evaluation rollout; disjoint from the data streams.
    pub fn evaluation_stream(&self, replication: u64, rollout: u64) -> ChaCha8Rng {
        self.keyed([EVAL_DOMAIN | replication, rollout, 0])
    }
}

/// Draws a Poisson(`lambda`) count by sequential inversion of the CDF.
pub fn sample_demand<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> Result<u64> {
    check_lambda(lambda)?;
    Ok(poisson_inversion(lambda, rng.gen::<f64>()))
}

fn poisson_inversion(lambda: f64, u: f64) -> u64 {
    let mut k = 0u64;
    let mut p = (-lambda).exp();
    let mut cdf = p;
    while u > cdf {
        k += 1;
        p *= lambda / k as f64;
        cdf += p;
        // Rounding can leave the CDF a hair below 1.
        if p == 0.0 && k as f64 > lambda {
            break;
        }
    }
    k
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u = rng.gen::<f64>();
    let mut acc = 0.0;
    let mut last = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = k;
        if u < acc {
            return k;
        }
    }
    last
}

/// One logged period: stock on hand, the price index charged and the
/// (uncensored) demand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub inventory: usize,
    pub price_index: usize,
    pub demand: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
}

impl Trajectory {
    /// Realized revenue `sum_t min(D_t, X_t) * A_t`.
    pub fn revenue(&self, prices: &[f64]) -> f64 {
        self.steps
            .iter()
            .map(|s| (s.demand.min(s.inventory as u64)) as f64 * prices[s.price_index])
            .sum()
    }
}

/// `N` logged trajectories plus per-period price counts.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    prices: Vec<f64>,
    horizon: usize,
    max_inventory: usize,
    trajectories: Vec<Trajectory>,
    counts: Vec<Vec<usize>>,
}

impl OfflineDataset {
    /// Validates shapes and the inventory recursion `x' = x - min(x, d)`.
    ///
    /// A trajectory may stop before the horizon, as when a log ends at a
    /// sell-out; later periods then simply have fewer observations.
    pub fn from_trajectories(
        prices: Vec<f64>,
        horizon: usize,
        max_inventory: usize,
        trajectories: Vec<Trajectory>,
    ) -> Result<Self> {
        crate::mdp::validate_prices(&prices)?;
        if trajectories.is_empty() {
            return Err(invalid("dataset needs at least one trajectory"));
        }
        let mut counts = vec![vec![0usize; prices.len()]; horizon];
        for (i, traj) in trajectories.iter().enumerate() {
            if traj.steps.is_empty() || traj.steps.len() > horizon {
                return Err(invalid(format!(
                    "trajectory {i} has {} steps, horizon is {horizon}",
                    traj.steps.len()
                )));
            }
            for (t, s) in traj.steps.iter().enumerate() {
                if s.inventory > max_inventory || s.price_index >= prices.len() {
                    return Err(invalid(format!("trajectory {i}, period {t}: step out of range")));
                }
                if let Some(next) = traj.steps.get(t + 1) {
                    let expect = s.inventory - s.inventory.min(s.demand as usize);
                    if next.inventory != expect {
                        return Err(invalid(format!(
                            "trajectory {i}, period {t}: inventory {} -> {} with demand {}",
                            s.inventory, next.inventory, s.demand
                        )));
                    }
                }
                counts[t][s.price_index] += 1;
            }
        }
        Ok(Self { prices, horizon, max_inventory, trajectories, counts })
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn max_inventory(&self) -> usize {
        self.max_inventory
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    /// `N_t(a)`: how often price index `k` was charged in period `t`.
    pub fn count(&self, t: usize, k: usize) -> usize {
        self.counts[t][k]
    }

    pub fn counts(&self, t: usize) -> &[usize] {
        &self.counts[t]
    }

    /// Price indices with a positive count at period `t`, ascending.
    pub fn observed(&self, t: usize) -> Vec<usize> {
        (0..self.prices.len()).filter(|&k| self.counts[t][k] > 0).collect()
    }

    pub fn max_demand(&self) -> u64 {
        self.trajectories.iter().flat_map(|tr| tr.steps.iter().map(|s| s.demand)).max().unwrap_or(0)
    }

    /// Rows `replication,trajectory,t,inventory,price,demand` (1-based `t`
    /// and trajectory).
    pub fn write_csv<W: Write>(&self, writer: W, replication: usize) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        write_rows(&mut w, self, replication, true)?;
        w.flush()?;
        Ok(())
    }
}

fn write_rows<W: Write>(
    w: &mut csv::Writer<W>,
    data: &OfflineDataset,
    replication: usize,
    header: bool,
) -> Result<()> {
    if header {
        w.write_record(["replication", "trajectory", "t", "inventory", "price", "demand"])?;
    }
    for (i, traj) in data.trajectories.iter().enumerate() {
        for (t, s) in traj.steps.iter().enumerate() {
            w.serialize((replication, i + 1, t + 1, s.inventory, data.prices[s.price_index], s.demand))?;
        }
    }
    Ok(())
}

/// Writes several replications into one CSV with a single header.
pub fn write_datasets_csv<W: Write>(writer: W, datasets: &[(usize, OfflineDataset)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for (i, (rep, d)) in datasets.iter().enumerate() {
        write_rows(&mut w, d, *rep, i == 0)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses the dataset CSV back, one dataset per replication id.
pub fn read_datasets_csv<R: Read>(
    reader: R,
    prices: &[f64],
    horizon: usize,
    max_inventory: usize,
) -> Result<BTreeMap<usize, OfflineDataset>> {
    #[derive(Deserialize)]
    struct Row {
        replication: usize,
        trajectory: usize,
        t: usize,
        inventory: usize,
        price: f64,
        demand: u64,
    }
    let mut grouped: BTreeMap<usize, BTreeMap<usize, BTreeMap<usize, Step>>> = BTreeMap::new();
    let mut r = csv::Reader::from_reader(reader);
    for rec in r.deserialize() {
        let row: Row = rec?;
        let price_index = price_index(prices, row.price)
            .ok_or_else(|| invalid(format!("price {} not in the grid", row.price)))?;
        let step = Step { inventory: row.inventory, price_index, demand: row.demand };
        grouped.entry(row.replication).or_default().entry(row.trajectory).or_default().insert(row.t, step);
    }
    grouped
        .into_iter()
        .map(|(rep, trajs)| {
            let trajectories = trajs
                .into_iter()
                .map(|(id, steps)| {
                    if steps.keys().copied().ne(1..=steps.len()) {
                        return Err(invalid(format!("replication {rep}, trajectory {id}: periods must run 1, 2, ...")));
                    }
                    Ok(Trajectory { steps: steps.into_values().collect() })
                })
                .collect::<Result<Vec<_>>>()?;
            OfflineDataset::from_trajectories(prices.to_vec(), horizon, max_inventory, trajectories)
                .map(|d| (rep, d))
        })
        .collect()
}

/// Metadata written next to a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub scenario: Option<usize>,
    pub n: usize,
    pub horizon: usize,
    pub replications: usize,
}

/// Simulates `n` trajectories from full stock under `behavior`.
pub fn generate_dataset(
    model: &PricingModel,
    behavior: &PolicyTable,
    n: usize,
    rng: &SeededRng,
    replication: u64,
) -> Result<OfflineDataset> {
    if n == 0 {
        return Err(invalid("number of trajectories must be positive"));
    }
    let (horizon, cap) = (model.horizon(), model.max_inventory());
    behavior.check_shape(horizon, cap, model.num_prices())?;
    let trajectories = (0..n)
        .map(|i| {
            let mut x = cap;
            let steps = (0..horizon)
                .map(|t| {
                    let mut s = rng.stream(replication, i as u64, t as u64);
                    let a = sample_index(behavior.row(t, x), &mut s);
                    let d = poisson_inversion(model.lambda(t, a), s.gen::<f64>());
                    let step = Step { inventory: x, price_index: a, demand: d };
                    x -= x.min(d as usize);
                    step
                })
                .collect();
            Trajectory { steps }
        })
        .collect();
    OfflineDataset::from_trajectories(model.prices().to_vec(), horizon, cap, trajectories)
}

/// Behavior policies of the five benchmark scenarios.
///
/// 1–3 split evenly between two of three prices, dropping the highest,
/// middle and lowest price respectively; 4 is the optimal policy; 5 is the
/// value-minimizing policy.
pub fn scenario_behavior(model: &PricingModel, scenario: usize) -> Result<PolicyTable> {
    match scenario {
        1..=3 => {
            require_three_prices(model)?;
            excluding(model, 3 - scenario, None)
        }
        4 => Ok(solve_optimal(model).policy),
        5 => Ok(solve_worst(model).policy),
        _ => Err(invalid(format!("scenario must be in 1..=5, got {scenario}"))),
    }
}

/// Perturbations of the optimal policy that drop one price.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SuboptimalType {
    /// Drops the highest price.
    I,
    /// Drops the middle price.
    II,
    /// Drops the lowest price.
    III,
}

impl SuboptimalType {
    fn excluded(self) -> usize {
        match self {
            SuboptimalType::I => 2,
            SuboptimalType::II => 1,
            SuboptimalType::III => 0,
        }
    }
}

/// Optimal policy with the excluded price replaced by an even split of the
/// other two wherever it would have been charged.
pub fn make_suboptimal_policy(model: &PricingModel, kind: SuboptimalType) -> Result<PolicyTable> {
    require_three_prices(model)?;
    excluding(model, kind.excluded(), Some(&solve_optimal(model).policy))
}

fn require_three_prices(model: &PricingModel) -> Result<()> {
    if model.num_prices() != 3 {
        return Err(invalid(format!(
            "this construction needs exactly three prices, model has {}",
            model.num_prices()
        )));
    }
    Ok(())
}

fn excluding(model: &PricingModel, dropped: usize, base: Option<&PolicyTable>) -> Result<PolicyTable> {
    let (horizon, cap) = (model.horizon(), model.max_inventory());
    let mut probs = Vec::with_capacity(horizon * (cap + 1) * 3);
    for t in 0..horizon {
        for x in 0..=cap {
            let replace = base.is_none_or(|b| b.action(t, x) == Some(dropped));
            for k in 0..3 {
                probs.push(if replace {
                    if k == dropped { 0.0 } else { 0.5 }
                } else {
                    base.expect("unreplaced rows come from a base policy").row(t, x)[k]
                });
            }
        }
    }
    PolicyTable::from_probs(horizon, cap, 3, probs)
}

/// Monte Carlo value estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub rollouts: usize,
}

/// Average realized revenue of `policy` over `rollouts` simulated runs from
/// full stock.
pub fn evaluate_policy_mc(
    model: &PricingModel,
    policy: &PolicyTable,
    rollouts: usize,
    rng: &SeededRng,
    replication: u64,
) -> Result<McEstimate> {
    if rollouts < 2 {
        return Err(invalid("need at least two rollouts"));
    }
    policy.check_shape(model.horizon(), model.max_inventory(), model.num_prices())?;
    let revenues: Vec<f64> = (0..rollouts)
        .map(|r| {
            let mut s = rng.evaluation_stream(replication, r as u64);
            let mut x = model.max_inventory();
            let mut total = 0.0;
            for t in 0..model.horizon() {
                let a = sample_index(policy.row(t, x), &mut s);
                let d = poisson_inversion(model.lambda(t, a), s.gen::<f64>()) as usize;
                let sold = d.min(x);
                total += sold as f64 * model.price(a);
                x -= sold;
            }
            total
        })
        .collect();
    let n = rollouts as f64;
    let mean = revenues.iter().sum::<f64>() / n;
    let var = revenues.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(McEstimate { mean, std_error: (var / n).sqrt(), rollouts })
}

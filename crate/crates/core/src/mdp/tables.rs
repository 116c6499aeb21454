use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, PricingError, Result};
use crate::mdp::model::price_index;

const ROW_TOLERANCE: f64 = 1e-12;

/// Dense table over (period, inventory, price index).
///
/// Used for Q-functions and for any other per-(t, x, a) quantity such as the
/// worst-case demand rates or regrets a learner records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    horizon: usize,
    max_inventory: usize,
    num_prices: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(horizon: usize, max_inventory: usize, num_prices: usize) -> Self {
        Self::filled(horizon, max_inventory, num_prices, 0.0)
    }

    pub fn filled(horizon: usize, max_inventory: usize, num_prices: usize, value: f64) -> Self {
        Self {
            horizon,
            max_inventory,
            num_prices,
            values: vec![value; horizon * (max_inventory + 1) * num_prices],
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn max_inventory(&self) -> usize {
        self.max_inventory
    }

    pub fn num_prices(&self) -> usize {
        self.num_prices
    }

    #[inline]
    fn offset(&self, t: usize, x: usize) -> usize {
        debug_assert!(t < self.horizon && x <= self.max_inventory);
        (t * (self.max_inventory + 1) + x) * self.num_prices
    }

    pub fn get(&self, t: usize, x: usize, k: usize) -> f64 {
        self.values[self.offset(t, x) + k]
    }

    pub fn set(&mut self, t: usize, x: usize, k: usize, value: f64) {
        let o = self.offset(t, x);
        self.values[o + k] = value;
    }

    pub fn row(&self, t: usize, x: usize) -> &[f64] {
        let o = self.offset(t, x);
        &self.values[o..o + self.num_prices]
    }

    pub fn row_mut(&mut self, t: usize, x: usize) -> &mut [f64] {
        let o = self.offset(t, x);
        &mut self.values[o..o + self.num_prices]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Writes `t,x,a,value` rows; `t` is 1-based and `a` is the price.
    pub fn write_csv<W: Write>(&self, writer: W, prices: &[f64]) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "x", "a", "value"])?;
        for t in 0..self.horizon {
            for x in 0..=self.max_inventory {
                for (k, v) in self.row(t, x).iter().enumerate() {
                    w.serialize((t + 1, x, prices[k], v))?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Value function rows for periods `0..=horizon`; the last row is the
/// terminal value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    horizon: usize,
    max_inventory: usize,
    values: Vec<f64>,
}

impl ValueTable {
    pub fn zeros(horizon: usize, max_inventory: usize) -> Self {
        Self { horizon, max_inventory, values: vec![0.0; (horizon + 1) * (max_inventory + 1)] }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn max_inventory(&self) -> usize {
        self.max_inventory
    }

    pub fn get(&self, t: usize, x: usize) -> f64 {
        self.values[t * (self.max_inventory + 1) + x]
    }

    pub fn set(&mut self, t: usize, x: usize, value: f64) {
        self.values[t * (self.max_inventory + 1) + x] = value;
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let w = self.max_inventory + 1;
        &self.values[t * w..(t + 1) * w]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [f64] {
        let w = self.max_inventory + 1;
        &mut self.values[t * w..(t + 1) * w]
    }

    /// Writes `t,x,value` rows for the decision periods (1-based `t`).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "x", "value"])?;
        for t in 0..self.horizon {
            for (x, v) in self.row(t).iter().enumerate() {
                w.serialize((t + 1, x, v))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Markov pricing policy: a price distribution for every (period, inventory).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    horizon: usize,
    max_inventory: usize,
    num_prices: usize,
    probs: Vec<f64>,
    deterministic: bool,
}

impl PolicyTable {
    /// Builds a policy from a dense probability array laid out as
    /// `[(t * (L + 1) + x) * K + k]`. Every row must be a distribution.
    pub fn from_probs(
        horizon: usize,
        max_inventory: usize,
        num_prices: usize,
        probs: Vec<f64>,
    ) -> Result<Self> {
        if probs.len() != horizon * (max_inventory + 1) * num_prices {
            return Err(PricingError::ShapeMismatch(format!(
                "policy has {} probabilities for a {horizon}x{}x{num_prices} table",
                probs.len(),
                max_inventory + 1
            )));
        }
        for (i, row) in probs.chunks(num_prices).enumerate() {
            check_distribution(row).map_err(|msg| {
                let (t, x) = (i / (max_inventory + 1), i % (max_inventory + 1));
                invalid(format!("policy row (t={t}, x={x}): {msg}"))
            })?;
        }
        let deterministic = probs.chunks(num_prices).all(is_one_hot);
        Ok(Self { horizon, max_inventory, num_prices, probs, deterministic })
    }

    /// A deterministic policy charging `choice(t, x)` (a price index).
    pub fn from_choices(
        horizon: usize,
        max_inventory: usize,
        num_prices: usize,
        mut choice: impl FnMut(usize, usize) -> usize,
    ) -> Self {
        let mut probs = vec![0.0; horizon * (max_inventory + 1) * num_prices];
        for t in 0..horizon {
            for x in 0..=max_inventory {
                let k = choice(t, x);
                assert!(k < num_prices, "price index {k} out of range");
                probs[(t * (max_inventory + 1) + x) * num_prices + k] = 1.0;
            }
        }
        Self { horizon, max_inventory, num_prices, probs, deterministic: true }
    }

    /// A policy whose price distribution ignores both time and inventory.
    pub fn stationary(horizon: usize, max_inventory: usize, dist: &[f64]) -> Result<Self> {
        let rows = horizon * (max_inventory + 1);
        Self::from_probs(horizon, max_inventory, dist.len(), dist.repeat(rows))
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn max_inventory(&self) -> usize {
        self.max_inventory
    }

    pub fn num_prices(&self) -> usize {
        self.num_prices
    }

    pub fn is_deterministic(&self) -> bool {
        self.deterministic
    }

    pub fn row(&self, t: usize, x: usize) -> &[f64] {
        let o = (t * (self.max_inventory + 1) + x) * self.num_prices;
        &self.probs[o..o + self.num_prices]
    }

    /// The price index charged at (t, x) when that row is one-hot.
    pub fn action(&self, t: usize, x: usize) -> Option<usize> {
        let row = self.row(t, x);
        if is_one_hot(row) {
            row.iter().position(|&p| p == 1.0)
        } else {
            None
        }
    }

    /// Whether a row depends on neither time nor inventory; returns that row.
    pub fn stationary_row(&self) -> Option<&[f64]> {
        let first = self.row(0, 0);
        let same = self.probs.chunks(self.num_prices).all(|r| r == first);
        same.then_some(first)
    }

    /// Checks every row is a distribution within 1e-12.
    pub fn validate(&self) -> Result<()> {
        for (i, row) in self.probs.chunks(self.num_prices).enumerate() {
            check_distribution(row).map_err(|msg| invalid(format!("policy row {i}: {msg}")))?;
        }
        Ok(())
    }

    pub(crate) fn check_shape(&self, horizon: usize, max_inventory: usize, num_prices: usize) -> Result<()> {
        if self.horizon != horizon || self.max_inventory != max_inventory || self.num_prices != num_prices {
            return Err(PricingError::ShapeMismatch(format!(
                "policy is {}x{}x{}, model needs {horizon}x{}x{num_prices}",
                self.horizon,
                self.max_inventory + 1,
                self.num_prices,
                max_inventory + 1
            )));
        }
        Ok(())
    }

    /// Deterministic policies are written as `t,x,price`; stochastic ones as
    /// `t,x,price,probability` with zero-probability entries omitted.
    pub fn write_csv<W: Write>(&self, writer: W, prices: &[f64]) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        if self.deterministic {
            w.write_record(["t", "x", "price"])?;
        } else {
            w.write_record(["t", "x", "price", "probability"])?;
        }
        for t in 0..self.horizon {
            for x in 0..=self.max_inventory {
                for (k, &p) in self.row(t, x).iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    if self.deterministic {
                        w.serialize((t + 1, x, prices[k]))?;
                    } else {
                        w.serialize((t + 1, x, prices[k], p))?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads either CSV layout produced by [`PolicyTable::write_csv`].
    pub fn read_csv<R: Read>(
        reader: R,
        prices: &[f64],
        horizon: usize,
        max_inventory: usize,
    ) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            t: usize,
            x: usize,
            price: f64,
            probability: Option<f64>,
        }
        let k = prices.len();
        let mut probs = vec![0.0; horizon * (max_inventory + 1) * k];
        let mut r = csv::Reader::from_reader(reader);
        for rec in r.deserialize() {
            let row: Row = rec?;
            if row.t == 0 || row.t > horizon || row.x > max_inventory {
                return Err(invalid(format!("policy entry (t={}, x={}) out of range", row.t, row.x)));
            }
            let idx = price_index(prices, row.price)
                .ok_or_else(|| invalid(format!("price {} not in the grid", row.price)))?;
            probs[((row.t - 1) * (max_inventory + 1) + row.x) * k + idx] += row.probability.unwrap_or(1.0);
        }
        Self::from_probs(horizon, max_inventory, k, probs)
    }
}

fn check_distribution(row: &[f64]) -> std::result::Result<(), String> {
    if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err("probabilities must be finite and non-negative".into());
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > ROW_TOLERANCE {
        return Err(format!("probabilities sum to {s}"));
    }
    Ok(())
}

fn is_one_hot(row: &[f64]) -> bool {
    row.iter().filter(|&&p| p == 1.0).count() == 1 && row.iter().all(|&p| p == 0.0 || p == 1.0)
}

/// Probability law of the inventory level at one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDistribution(Vec<f64>);

impl StateDistribution {
    pub fn new(mass: Vec<f64>) -> Result<Self> {
        check_distribution(&mass).map_err(|m| invalid(format!("state distribution: {m}")))?;
        Ok(Self(mass))
    }

    /// All mass at inventory `x` over levels `0..=max_inventory`.
    pub fn point_mass(max_inventory: usize, x: usize) -> Self {
        assert!(x <= max_inventory, "inventory {x} above cap {max_inventory}");
        let mut mass = vec![0.0; max_inventory + 1];
        mass[x] = 1.0;
        Self(mass)
    }

    pub(crate) fn from_raw(mass: Vec<f64>) -> Self {
        Self(mass)
    }

    pub fn mass(&self) -> &[f64] {
        &self.0
    }

    pub fn max_inventory(&self) -> usize {
        self.0.len() - 1
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn expectation(&self, f: impl Fn(usize) -> f64) -> f64 {
        self.0.iter().enumerate().map(|(x, m)| m * f(x)).sum()
    }
}

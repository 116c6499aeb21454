use serde::{Deserialize, Serialize};

use crate::error::{invalid, PricingError, Result};

/// A finite-horizon pricing problem with Poisson demand and no replenishment.
///
/// `lambda[t][k]` is the demand rate in period `t` when charging `prices[k]`.
/// Rates must lie in `[lambda_min, lambda_max]` and be non-increasing in the
/// price at every period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel", into = "RawModel")]
pub struct PricingModel {
    horizon: usize,
    max_inventory: usize,
    prices: Vec<f64>,
    lambda: Vec<Vec<f64>>,
    lambda_min: f64,
    lambda_max: f64,
}

#[derive(Serialize, Deserialize)]
struct RawModel {
    horizon: usize,
    max_inventory: usize,
    prices: Vec<f64>,
    lambda: Vec<Vec<f64>>,
    lambda_min: f64,
    lambda_max: f64,
}

impl TryFrom<RawModel> for PricingModel {
    type Error = PricingError;

    fn try_from(raw: RawModel) -> Result<Self> {
        PricingModel::new(
            raw.horizon,
            raw.max_inventory,
            raw.prices,
            raw.lambda,
            raw.lambda_min,
            raw.lambda_max,
        )
    }
}

impl From<PricingModel> for RawModel {
    fn from(m: PricingModel) -> Self {
        RawModel {
            horizon: m.horizon,
            max_inventory: m.max_inventory,
            prices: m.prices,
            lambda: m.lambda,
            lambda_min: m.lambda_min,
            lambda_max: m.lambda_max,
        }
    }
}

impl PricingModel {
    pub fn new(
        horizon: usize,
        max_inventory: usize,
        prices: Vec<f64>,
        lambda: Vec<Vec<f64>>,
        lambda_min: f64,
        lambda_max: f64,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(invalid("horizon must be at least 1"));
        }
        if max_inventory == 0 {
            return Err(invalid("max_inventory must be at least 1"));
        }
        validate_prices(&prices)?;
        if !(lambda_min.is_finite() && lambda_min > 0.0) {
            return Err(invalid(format!("lambda_min must be positive, got {lambda_min}")));
        }
        if !(lambda_max.is_finite() && lambda_max >= lambda_min) {
            return Err(invalid(format!(
                "lambda_max must be finite and at least lambda_min, got {lambda_max}"
            )));
        }
        if lambda.len() != horizon {
            return Err(invalid(format!(
                "expected {horizon} rows of demand rates, got {}",
                lambda.len()
            )));
        }
        for (t, row) in lambda.iter().enumerate() {
            if row.len() != prices.len() {
                return Err(invalid(format!(
                    "period {t}: expected {} demand rates, got {}",
                    prices.len(),
                    row.len()
                )));
            }
            for (k, &l) in row.iter().enumerate() {
                if !(l.is_finite() && l >= lambda_min && l <= lambda_max) {
                    return Err(invalid(format!(
                        "period {t}, price {}: rate {l} outside [{lambda_min}, {lambda_max}]",
                        prices[k]
                    )));
                }
            }
            if row.windows(2).any(|w| w[1] > w[0]) {
                return Err(invalid(format!(
                    "period {t}: demand rates must be non-increasing in price"
                )));
            }
        }
        Ok(Self { horizon, max_inventory, prices, lambda, lambda_min, lambda_max })
    }

    /// A model whose demand rates do not change over time.
    pub fn time_invariant(
        horizon: usize,
        max_inventory: usize,
        prices: Vec<f64>,
        rates: Vec<f64>,
        lambda_min: f64,
        lambda_max: f64,
    ) -> Result<Self> {
        let lambda = vec![rates; horizon];
        Self::new(horizon, max_inventory, prices, lambda, lambda_min, lambda_max)
    }

    /// The synthetic benchmark: four periods, fifteen units, prices
    /// {8, 9, 10} with time-constant rates {6, 4, 2.5}.
    pub fn benchmark() -> Self {
        Self::time_invariant(4, 15, vec![8.0, 9.0, 10.0], vec![6.0, 4.0, 2.5], 1.0, 10.0)
            .expect("benchmark model is valid")
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn max_inventory(&self) -> usize {
        self.max_inventory
    }

    pub fn num_prices(&self) -> usize {
        self.prices.len()
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn price(&self, k: usize) -> f64 {
        self.prices[k]
    }

    pub fn lambda(&self, t: usize, k: usize) -> f64 {
        self.lambda[t][k]
    }

    pub fn lambda_row(&self, t: usize) -> &[f64] {
        &self.lambda[t]
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    /// Index of `price` in the grid, matched within 1e-9.
    pub fn price_index(&self, price: f64) -> Option<usize> {
        price_index(&self.prices, price)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub(crate) fn validate_prices(prices: &[f64]) -> Result<()> {
    if prices.is_empty() {
        return Err(invalid("price grid is empty"));
    }
    if prices.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
        return Err(invalid("prices must be finite and positive"));
    }
    if prices.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("prices must be strictly increasing"));
    }
    Ok(())
}

pub(crate) fn price_index(prices: &[f64], price: f64) -> Option<usize> {
    prices.iter().position(|p| (p - price).abs() < 1e-9)
}

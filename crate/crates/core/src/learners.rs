//! Offline policy learners.
//!
//! All four learners run the same backward induction from `t = T - 1` down
//! to `0`, starting from a zero terminal value. They differ in how a price is
//! scored at each `(t, x)`:
//!
//! | method | score of price `a` | candidates |
//! |---|---|---|
//! | greedy | `Q(x, a; lambda_hat(a))` | observed prices |
//! | vanilla pessimistic | worst case over the price's own band | observed prices |
//! | refined pessimistic | `min` of `Q(x, a; lambda)` over `Omega_t(a)` | all prices |
//! | opportunistic | smallest worst-case regret | all prices |
//!
//! Ties go to the higher price, except that the opportunistic learner
//! minimizes regret, with ties again going to the higher price.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, PricingError, Result};
use crate::identification::{
    clipped_bounds, estimate_lambdas, refined_intervals, Band, DemandBounds, Interval, IntervalSet, LambdaEstimates,
};
use crate::mdp::{q_value, validate_prices, PolicyTable, QTable, ValueTable};
use crate::select::{argmax_high, argmin_high};
use crate::simulation::OfflineDataset;

/// Learner identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Greedy,
    VanillaPess,
    RefinedPess,
    Opportunistic,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Greedy, Method::VanillaPess, Method::RefinedPess, Method::Opportunistic];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Greedy => "greedy",
            Method::VanillaPess => "vanilla_pess",
            Method::RefinedPess => "refined_pess",
            Method::Opportunistic => "opportunistic",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = PricingError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| invalid(format!("unknown method '{s}'")))
    }
}

/// How the vanilla pessimistic learner penalizes uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VanillaPenalty {
    /// Worst case of `Q(x, a; lambda)` over the price's own clipped band
    /// `[l(a), u(a)]`.
    #[default]
    Band,
    /// Plug-in `Q(x, a; lambda_hat(a))` minus the band half-width `delta(a)`.
    Additive,
}

/// Direction of the inner optimization over `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extremum {
    Min,
    Max,
}

/// Tuning shared by the learners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    /// Scale of the band half-width `c * sqrt(log n / n)`.
    pub c: f64,
    /// Number of grid points for the inner `lambda` search, endpoints included.
    pub grid: usize,
    pub vanilla_penalty: VanillaPenalty,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self { c: 1.0, grid: 1001, vanilla_penalty: VanillaPenalty::Band }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c >= 0.0) {
            return Err(invalid(format!("c must be non-negative, got {}", self.c)));
        }
        if self.grid < 2 {
            return Err(invalid(format!("grid needs at least 2 points, got {}", self.grid)));
        }
        Ok(())
    }
}

/// Extremum of `lambda -> Q(x, price; lambda)` over `[lower, upper]`,
/// searched on `grid` equally spaced points including both ends.
///
/// Returns the extremal value and the smallest `lambda` attaining it. A point
/// interval is evaluated once.
///
/// ```
/// use offline_pricing::learners::{optimize_q_over_interval, Extremum};
///
/// // With nothing left to sell later, more demand is always better.
/// let (v, lambda) = optimize_q_over_interval(3, 10.0, (2.0, 5.0), &[0.0; 4], Extremum::Min, 101).unwrap();
/// assert_eq!(lambda, 2.0);
/// assert!((v - 10.0 * offline_pricing::mdp::expected_sales(2.0, 3).unwrap()).abs() < 1e-12);
/// ```
pub fn optimize_q_over_interval(
    x: usize,
    price: f64,
    interval: (f64, f64),
    v_next: &[f64],
    mode: Extremum,
    grid: usize,
) -> Result<(f64, f64)> {
    let (lo, hi) = interval;
    if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
        return Err(invalid(format!("invalid interval [{lo}, {hi}]")));
    }
    if grid < 2 {
        return Err(invalid("grid needs at least 2 points"));
    }
    if v_next.len() <= x {
        return Err(invalid(format!("next-period values cover {} states, need {}", v_next.len(), x + 1)));
    }
    Ok(optimize_unchecked(x, price, lo, hi, v_next, mode, grid))
}

fn optimize_unchecked(x: usize, price: f64, lo: f64, hi: f64, v_next: &[f64], mode: Extremum, grid: usize) -> (f64, f64) {
    if lo == hi || x == 0 {
        return (q_value(x, price, lo, v_next), lo);
    }
    let step = (hi - lo) / (grid - 1) as f64;
    let mut best = (q_value(x, price, lo, v_next), lo);
    for i in 1..grid {
        let lambda = if i == grid - 1 { hi } else { lo + step * i as f64 };
        let v = q_value(x, price, lambda, v_next);
        let better = match mode {
            Extremum::Min => v < best.0,
            Extremum::Max => v > best.0,
        };
        if better {
            best = (v, lambda);
        }
    }
    best
}

/// Outcome of one `(t, x)` step.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: usize,
    pub value: f64,
    /// Score of every price; `-inf` for prices the method may not choose.
    pub q: Vec<f64>,
    /// `lambda` attaining each score, when the score comes from an interval.
    pub lambda: Option<Vec<f64>>,
    /// Worst-case regret of every price (opportunistic only).
    pub regret: Option<Vec<f64>>,
}

fn check_step(x: usize, prices: &[f64], n: usize, v_next: &[f64]) -> Result<()> {
    validate_prices(prices)?;
    if n != prices.len() {
        return Err(invalid(format!("expected {} per-price entries, got {n}", prices.len())));
    }
    if v_next.len() <= x {
        return Err(invalid(format!("next-period values cover {} states, need {}", v_next.len(), x + 1)));
    }
    Ok(())
}

fn pick_max(q: Vec<f64>, lambda: Option<Vec<f64>>) -> Option<Decision> {
    let (action, value) = argmax_high(q.iter().copied().enumerate().filter(|(_, v)| *v > f64::NEG_INFINITY))?;
    Some(Decision { action, value, q, lambda, regret: None })
}

/// Plug-in step: `Q(x, a; lambda_hat(a)) - penalty(a)` over prices with an
/// estimate. Greedy is the zero-penalty case.
pub fn plug_in_step(
    x: usize,
    prices: &[f64],
    lambda_hat: &[Option<f64>],
    penalty: &[f64],
    v_next: &[f64],
) -> Result<Option<Decision>> {
    check_step(x, prices, lambda_hat.len(), v_next)?;
    if penalty.len() != prices.len() {
        return Err(invalid("penalty length differs from the price grid"));
    }
    let q = lambda_hat
        .iter()
        .zip(prices)
        .zip(penalty)
        .map(|((l, &p), &pen)| match l {
            Some(l) => q_value(x, p, *l, v_next) - pen,
            None => f64::NEG_INFINITY,
        })
        .collect();
    Ok(pick_max(q, None))
}

/// Worst case of each price over its own band; prices without a band are
/// excluded.
pub fn band_pessimistic_step(
    x: usize,
    prices: &[f64],
    bands: &[Option<Band>],
    v_next: &[f64],
    grid: usize,
) -> Result<Option<Decision>> {
    check_step(x, prices, bands.len(), v_next)?;
    let mut q = vec![f64::NEG_INFINITY; prices.len()];
    let mut lambda = vec![f64::NAN; prices.len()];
    for (k, b) in bands.iter().enumerate() {
        if let Some(b) = b {
            let (v, l) = optimize_q_over_interval(x, prices[k], (b.lower, b.upper), v_next, Extremum::Min, grid)?;
            q[k] = v;
            lambda[k] = l;
        }
    }
    Ok(pick_max(q, Some(lambda)))
}

/// Worst case of each price over its refined interval; every price is a
/// candidate.
pub fn refined_pessimistic_step(
    x: usize,
    prices: &[f64],
    intervals: &[Interval],
    v_next: &[f64],
    grid: usize,
) -> Result<Decision> {
    check_step(x, prices, intervals.len(), v_next)?;
    let mut q = Vec::with_capacity(prices.len());
    let mut lambda = Vec::with_capacity(prices.len());
    for (i, &p) in intervals.iter().zip(prices) {
        let (v, l) = optimize_q_over_interval(x, p, (i.lower, i.upper), v_next, Extremum::Min, grid)?;
        q.push(v);
        lambda.push(l);
    }
    Ok(pick_max(q, Some(lambda)).expect("at least one price"))
}

/// Minimax-regret step over refined intervals.
///
/// The regret of `a` is `max(0, max_{a' != a} best(a') - worst(a))`, where
/// `best` and `worst` are the largest and smallest `Q` over each interval.
/// The stored score of `a` is `worst(a)`.
pub fn opportunistic_step(
    x: usize,
    prices: &[f64],
    intervals: &[Interval],
    v_next: &[f64],
    grid: usize,
) -> Result<Decision> {
    check_step(x, prices, intervals.len(), v_next)?;
    let k = prices.len();
    let mut best = Vec::with_capacity(k);
    let mut worst = Vec::with_capacity(k);
    let mut lambda = Vec::with_capacity(k);
    for (i, &p) in intervals.iter().zip(prices) {
        let (hi, _) = optimize_q_over_interval(x, p, (i.lower, i.upper), v_next, Extremum::Max, grid)?;
        let (lo, l) = optimize_q_over_interval(x, p, (i.lower, i.upper), v_next, Extremum::Min, grid)?;
        best.push(hi);
        worst.push(lo);
        lambda.push(l);
    }
    let regret: Vec<f64> = (0..k)
        .map(|a| {
            let rival = (0..k).filter(|&j| j != a).map(|j| best[j]).fold(f64::NEG_INFINITY, f64::max);
            (rival - worst[a]).max(0.0)
        })
        .collect();
    let (action, _) = argmin_high(regret.iter().copied().enumerate()).expect("at least one price");
    Ok(Decision { action, value: worst[action], q: worst, lambda: Some(lambda), regret: Some(regret) })
}

/// Fitted policy with the tables it was chosen from.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerOutput {
    pub method: Method,
    pub prices: Vec<f64>,
    pub policy: PolicyTable,
    /// Per-price score the policy maximizes (for the opportunistic learner,
    /// the worst-case `Q`).
    pub q: QTable,
    pub v: ValueTable,
    /// `lambda` attaining each score, for interval-based scores.
    pub lambda_choice: Option<QTable>,
    /// Worst-case regret per `(t, x, a)` (opportunistic only).
    pub regret: Option<QTable>,
}

impl LearnerOutput {
    pub fn write_policy_csv<W: Write>(&self, writer: W) -> Result<()> {
        self.policy.write_csv(writer, &self.prices)
    }

    pub fn write_q_csv<W: Write>(&self, writer: W) -> Result<()> {
        self.q.write_csv(writer, &self.prices)
    }

    pub fn write_values_csv<W: Write>(&self, writer: W) -> Result<()> {
        self.v.write_csv(writer)
    }

    pub fn write_lambda_csv<W: Write>(&self, writer: W) -> Result<()> {
        match &self.lambda_choice {
            Some(t) => t.write_csv(writer, &self.prices),
            None => Err(invalid(format!("{} stores no lambda choices", self.method))),
        }
    }

    pub fn write_regret_csv<W: Write>(&self, writer: W) -> Result<()> {
        match &self.regret {
            Some(t) => t.write_csv(writer, &self.prices),
            None => Err(invalid(format!("{} stores no regrets", self.method))),
        }
    }

    /// Re-derives each action from the stored tables and reports whether it
    /// matches the stored policy everywhere.
    pub fn is_consistent(&self) -> bool {
        let (horizon, cap) = (self.q.horizon(), self.q.max_inventory());
        (0..horizon).all(|t| {
            (0..=cap).all(|x| {
                let expected = match &self.regret {
                    Some(r) => argmin_high(r.row(t, x).iter().copied().enumerate()).map(|(k, _)| k),
                    None => argmax_high(
                        self.q.row(t, x).iter().copied().enumerate().filter(|(_, v)| *v > f64::NEG_INFINITY),
                    )
                    .map(|(k, _)| k),
                };
                let a = self.policy.action(t, x);
                a.is_some()
                    && a == expected
                    && self.v.get(t, x) == self.q.get(t, x, a.expect("checked"))
            })
        })
    }
}

fn backward<F>(
    method: Method,
    prices: &[f64],
    horizon: usize,
    max_inventory: usize,
    mut step: F,
) -> Result<LearnerOutput>
where
    F: FnMut(usize, usize, &[f64]) -> Result<Decision>,
{
    let k = prices.len();
    let mut q = QTable::zeros(horizon, max_inventory, k);
    let mut v = ValueTable::zeros(horizon, max_inventory);
    let mut lambda_choice: Option<QTable> = None;
    let mut regret: Option<QTable> = None;
    let mut choices = vec![vec![0usize; max_inventory + 1]; horizon];
    for t in (0..horizon).rev() {
        let v_next = v.row(t + 1).to_vec();
        for x in 0..=max_inventory {
            let d = step(t, x, &v_next)?;
            q.row_mut(t, x).copy_from_slice(&d.q);
            v.set(t, x, d.value);
            choices[t][x] = d.action;
            if let Some(l) = d.lambda {
                lambda_choice
                    .get_or_insert_with(|| QTable::filled(horizon, max_inventory, k, f64::NAN))
                    .row_mut(t, x)
                    .copy_from_slice(&l);
            }
            if let Some(r) = d.regret {
                regret.get_or_insert_with(|| QTable::zeros(horizon, max_inventory, k)).row_mut(t, x).copy_from_slice(&r);
            }
        }
    }
    let policy = PolicyTable::from_choices(horizon, max_inventory, k, |t, x| choices[t][x]);
    Ok(LearnerOutput { method, prices: prices.to_vec(), policy, q, v, lambda_choice, regret })
}

fn unlearnable(t: usize) -> PricingError {
    PricingError::Unlearnable { period: t }
}

/// Greedy plug-in learner on prepared estimates.
pub fn greedy_from_estimates(est: &LambdaEstimates, max_inventory: usize) -> Result<LearnerOutput> {
    let prices = est.prices().to_vec();
    let zero = vec![0.0; prices.len()];
    backward(Method::Greedy, &prices, est.horizon(), max_inventory, |t, x, v_next| {
        let lambda_hat: Vec<Option<f64>> = (0..prices.len()).map(|k| est.lambda_hat(t, k)).collect();
        plug_in_step(x, &prices, &lambda_hat, &zero, v_next)?.ok_or_else(|| unlearnable(t))
    })
}

/// Vanilla pessimistic learner on prepared estimates.
pub fn vanilla_from_estimates(
    est: &LambdaEstimates,
    bounds: DemandBounds,
    max_inventory: usize,
    config: &LearnerConfig,
) -> Result<LearnerOutput> {
    config.validate()?;
    let prices = est.prices().to_vec();
    let k = prices.len();
    backward(Method::VanillaPess, &prices, est.horizon(), max_inventory, |t, x, v_next| {
        let decision = match config.vanilla_penalty {
            VanillaPenalty::Band => {
                let bands: Vec<Option<Band>> = (0..k).map(|a| clipped_bounds(est, t, a, bounds).ok()).collect();
                band_pessimistic_step(x, &prices, &bands, v_next, config.grid)?
            }
            VanillaPenalty::Additive => {
                let lambda_hat: Vec<Option<f64>> = (0..k).map(|a| est.lambda_hat(t, a)).collect();
                let penalty: Vec<f64> = (0..k).map(|a| est.delta(t, a).unwrap_or(0.0)).collect();
                plug_in_step(x, &prices, &lambda_hat, &penalty, v_next)?
            }
        };
        decision.ok_or_else(|| unlearnable(t))
    })
}

/// Refined pessimistic learner on prepared intervals.
pub fn refined_from_intervals(intervals: &IntervalSet, max_inventory: usize, grid: usize) -> Result<LearnerOutput> {
    let prices = intervals.prices().to_vec();
    backward(Method::RefinedPess, &prices, intervals.horizon(), max_inventory, |t, x, v_next| {
        refined_pessimistic_step(x, &prices, intervals.period(t), v_next, grid)
    })
}

/// Opportunistic learner on prepared intervals.
pub fn opportunistic_from_intervals(intervals: &IntervalSet, max_inventory: usize, grid: usize) -> Result<LearnerOutput> {
    let prices = intervals.prices().to_vec();
    backward(Method::Opportunistic, &prices, intervals.horizon(), max_inventory, |t, x, v_next| {
        opportunistic_step(x, &prices, intervals.period(t), v_next, grid)
    })
}

/// Greedy plug-in policy over observed prices.
pub fn learn_greedy(dataset: &OfflineDataset) -> Result<LearnerOutput> {
    greedy_from_estimates(&estimate_lambdas(dataset, 0.0)?, dataset.max_inventory())
}

pub fn learn_vanilla_pessimistic(
    dataset: &OfflineDataset,
    bounds: DemandBounds,
    config: &LearnerConfig,
) -> Result<LearnerOutput> {
    config.validate()?;
    vanilla_from_estimates(&estimate_lambdas(dataset, config.c)?, bounds, dataset.max_inventory(), config)
}

pub fn learn_refined_pessimistic(
    dataset: &OfflineDataset,
    bounds: DemandBounds,
    config: &LearnerConfig,
) -> Result<LearnerOutput> {
    config.validate()?;
    let est = estimate_lambdas(dataset, config.c)?;
    refined_from_intervals(&refined_intervals(&est, bounds), dataset.max_inventory(), config.grid)
}

pub fn learn_opportunistic(
    dataset: &OfflineDataset,
    bounds: DemandBounds,
    config: &LearnerConfig,
) -> Result<LearnerOutput> {
    config.validate()?;
    let est = estimate_lambdas(dataset, config.c)?;
    opportunistic_from_intervals(&refined_intervals(&est, bounds), dataset.max_inventory(), config.grid)
}

/// Dispatches on `method`.
pub fn learn(method: Method, dataset: &OfflineDataset, bounds: DemandBounds, config: &LearnerConfig) -> Result<LearnerOutput> {
    match method {
        Method::Greedy => learn_greedy(dataset),
        Method::VanillaPess => learn_vanilla_pessimistic(dataset, bounds, config),
        Method::RefinedPess => learn_refined_pessimistic(dataset, bounds, config),
        Method::Opportunistic => learn_opportunistic(dataset, bounds, config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert!("pess".parse::<Method>().is_err());
    }

    #[test]
    fn point_interval_single_evaluation() {
        let v_next = [0.0, 5.0, 9.0];
        let (v, l) = optimize_q_over_interval(2, 8.0, (3.0, 3.0), &v_next, Extremum::Min, 1001).unwrap();
        assert_eq!(l, 3.0);
        assert_eq!(v, q_value(2, 8.0, 3.0, &v_next));
    }

    #[test]
    fn invalid_interval_rejected() {
        assert!(optimize_q_over_interval(1, 8.0, (3.0, 2.0), &[0.0, 0.0], Extremum::Min, 11).is_err());
        assert!(optimize_q_over_interval(1, 8.0, (0.0, 2.0), &[0.0, 0.0], Extremum::Min, 11).is_err());
        assert!(optimize_q_over_interval(1, 8.0, (1.0, 2.0), &[0.0, 0.0], Extremum::Min, 1).is_err());
        assert!(optimize_q_over_interval(2, 8.0, (1.0, 2.0), &[0.0, 0.0], Extremum::Min, 11).is_err());
    }

    #[test]
    fn high_future_value_puts_worst_case_at_right_end() {
        // One unit left and keeping it is worth more than selling it now.
        let (_, l) = optimize_q_over_interval(1, 9.0, (0.5, 2.0), &[0.0, 20.0], Extremum::Min, 1001).unwrap();
        assert_eq!(l, 2.0);
        let (_, l) = optimize_q_over_interval(1, 9.0, (0.5, 2.0), &[0.0, 20.0], Extremum::Max, 1001).unwrap();
        assert_eq!(l, 0.5);
    }

    #[test]
    fn additive_penalty_prefers_more_data() {
        let prices = [8.0, 9.0];
        // Same plug-in score for both prices by construction: one unit,
        // no future value, lambda chosen so 8(1-e^-l8) = 9(1-e^-l9).
        let l9: f64 = 1.0;
        let l8 = -(1.0 - 9.0 * (1.0 - (-l9).exp()) / 8.0).ln();
        let d = plug_in_step(1, &prices, &[Some(l8), Some(l9)], &[0.1, 0.3], &[0.0, 0.0]).unwrap().unwrap();
        assert_eq!(d.action, 0);
        let d = plug_in_step(1, &prices, &[Some(l8), Some(l9)], &[0.3, 0.1], &[0.0, 0.0]).unwrap().unwrap();
        assert_eq!(d.action, 1);
    }

    #[test]
    fn no_candidates_gives_none() {
        assert!(plug_in_step(1, &[8.0], &[None], &[0.0], &[0.0, 0.0]).unwrap().is_none());
        assert!(band_pessimistic_step(1, &[8.0], &[None], &[0.0, 0.0], 11).unwrap().is_none());
    }

    #[test]
    fn empty_inventory_scores_zero() {
        let iv = [Interval::point(2.0), Interval::point(1.0)];
        let d = refined_pessimistic_step(0, &[8.0, 9.0], &iv, &[0.0], 11).unwrap();
        assert_eq!((d.action, d.value), (1, 0.0));
        let d = opportunistic_step(0, &[8.0, 9.0], &iv, &[0.0], 11).unwrap();
        assert_eq!(d.action, 1);
        assert_eq!(d.regret.unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn config_validation() {
        assert!(LearnerConfig { c: -1.0, ..Default::default() }.validate().is_err());
        assert!(LearnerConfig { grid: 1, ..Default::default() }.validate().is_err());
        let cfg: LearnerConfig = serde_json::from_str(r#"{"grid": 51}"#).unwrap();
        assert_eq!(cfg, LearnerConfig { grid: 51, ..Default::default() });
    }
}

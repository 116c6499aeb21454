//! Numerical checks of the regret theory: the regret decomposition, the
//! constant-free bound components, pessimism of the refined Q-function,
//! Lipschitz continuity in `lambda`, and the static opportunistic selection
//! conditions.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::identification::{delta, estimate_lambdas, kappa, Band, DemandBounds};
use crate::learners::LearnerOutput;
use crate::mdp::{
    evaluate_policy_exact, forward_state_distribution, q_value, solve_optimal, PolicyTable, PricingModel, QTable,
    StateDistribution, ValueTable,
};
use crate::simulation::OfflineDataset;

/// `V_t(x) = sum_a pi_t(a|x) Q_t(x, a)`, skipping zero-probability prices.
pub fn policy_values(q: &QTable, policy: &PolicyTable) -> Result<ValueTable> {
    policy.check_shape(q.horizon(), q.max_inventory(), q.num_prices())?;
    let mut v = ValueTable::zeros(q.horizon(), q.max_inventory());
    for t in 0..q.horizon() {
        for x in 0..=q.max_inventory() {
            v.set(t, x, weighted(q.row(t, x), policy.row(t, x))?);
        }
    }
    Ok(v)
}

fn weighted(values: &[f64], probs: &[f64]) -> Result<f64> {
    let mut s = 0.0;
    for (&v, &p) in values.iter().zip(probs) {
        if p > 0.0 {
            if !v.is_finite() {
                return Err(invalid("estimated Q is not finite where the policy puts mass"));
            }
            s += p * v;
        }
    }
    Ok(s)
}

/// Bellman residual `l_t(x, a) = (B_t V_{t+1})(x, a) - Q_t(x, a)` under the
/// true model, with `V` held fixed.
pub fn bellman_residuals(model: &PricingModel, q: &QTable, v: &ValueTable) -> Result<QTable> {
    let (horizon, cap, k) = (model.horizon(), model.max_inventory(), model.num_prices());
    if (q.horizon(), q.max_inventory(), q.num_prices()) != (horizon, cap, k)
        || (v.horizon(), v.max_inventory()) != (horizon, cap)
    {
        return Err(crate::PricingError::ShapeMismatch("tables do not match the model".into()));
    }
    let mut l = QTable::zeros(horizon, cap, k);
    for t in 0..horizon {
        let v_next = v.row(t + 1);
        for x in 0..=cap {
            for a in 0..k {
                l.set(t, x, a, q_value(x, model.price(a), model.lambda(t, a), v_next) - q.get(t, x, a));
            }
        }
    }
    Ok(l)
}

/// Terms of the regret decomposition `mu = J1 - J2 + J3` at full stock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub regret: f64,
    pub optimal_value: f64,
    pub policy_value: f64,
    pub j1: f64,
    pub j2: f64,
    pub j3: f64,
    pub residual: f64,
}

/// Decomposes the regret of `pi_hat` against `optimal` using estimated
/// `q_hat`, with `V_hat` derived from `q_hat` and `pi_hat`. All expectations
/// are exact sums over propagated state laws.
///
/// An empty stock is worth nothing, so `q_hat` must give `V_hat(0) = 0` in
/// every period.
pub fn decompose(
    model: &PricingModel,
    q_hat: &QTable,
    pi_hat: &PolicyTable,
    optimal: &PolicyTable,
    init: &StateDistribution,
) -> Result<DecompositionReport> {
    let v_hat = policy_values(q_hat, pi_hat)?;
    if (0..v_hat.horizon()).any(|t| v_hat.get(t, 0) != 0.0) {
        return Err(invalid("estimated values at zero inventory must be 0"));
    }
    let l = bellman_residuals(model, q_hat, &v_hat)?;
    let law_opt = forward_state_distribution(model, optimal, init)?;
    let law_hat = forward_state_distribution(model, pi_hat, init)?;
    let (mut j1, mut j2, mut j3) = (0.0, 0.0, 0.0);
    for t in 0..model.horizon() {
        for x in 0..=model.max_inventory() {
            let (m_opt, m_hat) = (law_opt[t].mass()[x], law_hat[t].mass()[x]);
            if m_opt > 0.0 {
                j1 += m_opt * weighted(l.row(t, x), optimal.row(t, x))?;
                let diff: Vec<f64> =
                    optimal.row(t, x).iter().zip(pi_hat.row(t, x)).map(|(a, b)| a - b).collect();
                let mut s = 0.0;
                for (&qv, &d) in q_hat.row(t, x).iter().zip(&diff) {
                    if d != 0.0 {
                        if !qv.is_finite() {
                            return Err(invalid("estimated Q is not finite where the policies differ"));
                        }
                        s += qv * d;
                    }
                }
                j3 += m_opt * s;
            }
            if m_hat > 0.0 {
                j2 += m_hat * weighted(l.row(t, x), pi_hat.row(t, x))?;
            }
        }
    }
    let optimal_value = evaluate_policy_exact(model, optimal, init)?.expected;
    let policy_value = evaluate_policy_exact(model, pi_hat, init)?.expected;
    let regret = optimal_value - policy_value;
    Ok(DecompositionReport {
        regret,
        optimal_value,
        policy_value,
        j1,
        j2,
        j3,
        residual: (regret - (j1 - j2 + j3)).abs(),
    })
}

/// Decomposition of a learner's regret from full stock.
pub fn decomposition_check(
    model: &PricingModel,
    learned: &LearnerOutput,
    optimal: &PolicyTable,
) -> Result<DecompositionReport> {
    let init = StateDistribution::point_mass(model.max_inventory(), model.max_inventory());
    decompose(model, &learned.q, &learned.policy, optimal, &init)
}

/// Constant-free components of the high-probability regret bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub prices: Vec<f64>,
    /// `covered[t][a]`: the optimal policy charging `a` implies the behavior
    /// policy charges it too.
    pub covered: Vec<Vec<bool>>,
    /// Width proxy of the identification interval; `None` when period `t`
    /// has no observed price.
    pub eta: Vec<Vec<Option<f64>>>,
    pub kappa: Vec<f64>,
    pub term1: f64,
    pub term2: f64,
    /// `1 - sum_t [sum_{observed a} 1 / N_t(a) + kappa_t]`.
    pub probability_floor: f64,
}

impl BoundReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Rows `t,price,covered,eta`.
    pub fn write_eta_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "price", "covered", "eta"])?;
        for (t, row) in self.eta.iter().enumerate() {
            for (k, e) in row.iter().enumerate() {
                w.serialize((t + 1, self.prices[k], self.covered[t][k], e))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluates the bound components for a dataset, given per-period price
/// marginals of the optimal and behavior policies.
///
/// Prices the behavior policy charges but the dataset never observed enter
/// the first term with count 1.
pub fn bound_components(
    model: &PricingModel,
    dataset: &OfflineDataset,
    optimal_marginals: &[Vec<f64>],
    behavior_marginals: &[Vec<f64>],
    c: f64,
) -> Result<BoundReport> {
    let (horizon, k) = (model.horizon(), model.num_prices());
    let shape_ok = |m: &[Vec<f64>]| m.len() == horizon && m.iter().all(|r| r.len() == k);
    if !shape_ok(optimal_marginals) || !shape_ok(behavior_marginals) {
        return Err(invalid("marginals must have one row per period and one entry per price"));
    }
    if dataset.horizon() != horizon || dataset.prices() != model.prices() {
        return Err(invalid("dataset does not match the model"));
    }
    let est = estimate_lambdas(dataset, c)?;
    let n = dataset.len();
    let mut covered = Vec::with_capacity(horizon);
    let mut eta = Vec::with_capacity(horizon);
    let mut kappas = Vec::with_capacity(horizon);
    let (mut term1, mut term2, mut spent) = (0.0, 0.0, 0.0);
    for t in 0..horizon {
        let (p_opt, p_b) = (&optimal_marginals[t], &behavior_marginals[t]);
        let cov: Vec<bool> = (0..k).map(|a| p_opt[a] <= 0.0 || p_b[a] > 0.0).collect();
        let observed = est.observed(t);
        let eta_t: Vec<Option<f64>> = (0..k)
            .map(|a| {
                let (up, low) = if est.is_observed(t, a) {
                    (Some(a), Some(a))
                } else {
                    (
                        observed.iter().copied().rev().find(|&j| j < a),
                        observed.iter().copied().find(|&j| j > a),
                    )
                };
                let d = |j: usize| est.delta(t, j).expect("observed price has a width");
                match (up, low) {
                    (Some(u), Some(l)) => Some(model.lambda(t, u) - model.lambda(t, l) + 2.0 * d(u) + 2.0 * d(l)),
                    (None, Some(l)) => Some(model.lambda_max() - model.lambda(t, l) + 2.0 * d(l)),
                    (Some(u), None) => Some(model.lambda(t, u) + 2.0 * d(u)),
                    (None, None) => None,
                }
            })
            .collect();
        for a in 0..k {
            if p_opt[a] <= 0.0 {
                continue;
            }
            if cov[a] {
                term1 += p_opt[a] * delta(est.count(t, a).max(1), 1.0)?;
            } else {
                term2 += p_opt[a] * eta_t[a].ok_or_else(|| invalid(format!("period {t} has no observed price")))?;
            }
        }
        let kt = kappa(p_b, n)?;
        spent += kt + observed.iter().map(|&a| 1.0 / est.count(t, a) as f64).sum::<f64>();
        kappas.push(kt);
        covered.push(cov);
        eta.push(eta_t);
    }
    Ok(BoundReport {
        prices: model.prices().to_vec(),
        covered,
        eta,
        kappa: kappas,
        term1,
        term2,
        probability_floor: 1.0 - spent,
    })
}

/// Cellwise comparison of an estimated Q-function with the true one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PessimismReport {
    pub violations: usize,
    pub cells: usize,
    pub fraction: f64,
}

/// Counts cells with `Q_hat > Q* + 1e-9`.
pub fn pessimism_validity(model: &PricingModel, learned: &LearnerOutput) -> Result<PessimismReport> {
    let q_star = solve_optimal(model).q;
    let q = &learned.q;
    if (q.horizon(), q.max_inventory(), q.num_prices()) != (q_star.horizon(), q_star.max_inventory(), q_star.num_prices()) {
        return Err(crate::PricingError::ShapeMismatch("learner tables do not match the model".into()));
    }
    let cells = q.values().len();
    let violations = q.values().iter().zip(q_star.values()).filter(|(a, b)| **a > **b + 1e-9).count();
    Ok(PessimismReport { violations, cells, fraction: violations as f64 / cells as f64 })
}

/// Empirical sensitivity of `Q(x, a; lambda)` to `lambda` with the optimal
/// continuation value held fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    /// Largest observed `|dQ| / |d lambda|`.
    pub worst_ratio: f64,
    /// `max price + 2 max V`, a bound on the slope.
    pub analytic_bound: f64,
    pub samples: usize,
}

pub fn lipschitz_check(model: &PricingModel, samples: usize, seed: u64) -> Result<LipschitzReport> {
    if samples == 0 {
        return Err(invalid("need at least one sample"));
    }
    let v = solve_optimal(model).v;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (model.lambda_min(), model.lambda_max());
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let t = rng.gen_range(0..model.horizon());
        let x = rng.gen_range(0..=model.max_inventory());
        let a = rng.gen_range(0..model.num_prices());
        let (l1, l2) = (rng.gen_range(lo..=hi), rng.gen_range(lo..=hi));
        if l1 == l2 {
            continue;
        }
        let v_next = v.row(t + 1);
        let dq = q_value(x, model.price(a), l1, v_next) - q_value(x, model.price(a), l2, v_next);
        worst = worst.max(dq.abs() / (l1 - l2).abs());
    }
    let v_sup = v.row(1).iter().cloned().fold(0.0, f64::max);
    let p_max = model.prices().iter().cloned().fold(0.0, f64::max);
    Ok(LipschitzReport { worst_ratio: worst, analytic_bound: p_max + 2.0 * v_sup, samples })
}

/// Which of the three prices is unobserved in a static selection condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StaticCondition {
    HighestUnobserved,
    MiddleUnobserved,
    LowestUnobserved,
}

impl StaticCondition {
    /// Index (in ascending price order) of the unobserved price.
    pub fn unobserved_index(self) -> usize {
        match self {
            StaticCondition::HighestUnobserved => 2,
            StaticCondition::MiddleUnobserved => 1,
            StaticCondition::LowestUnobserved => 0,
        }
    }
}

/// Sufficient condition for the opportunistic learner to pick the
/// unobserved price in a single period with unlimited stock.
///
/// `prices` are ascending; `bands[i]` is the band of price `i` and must be
/// `None` exactly for the unobserved price. Bands are assumed monotone, so
/// that the unobserved price borrows from its nearest neighbours.
pub fn static_condition_check(
    prices: &[f64],
    bands: &[Option<Band>],
    bounds: DemandBounds,
    which: StaticCondition,
) -> Result<bool> {
    if prices.len() != 3 || bands.len() != 3 {
        return Err(invalid("static conditions need exactly three prices"));
    }
    crate::mdp::validate_prices(prices)?;
    let hidden = which.unobserved_index();
    for (i, b) in bands.iter().enumerate() {
        if (i == hidden) != b.is_none() {
            return Err(invalid("exactly the unobserved price must lack a band"));
        }
    }
    // a1 > a2 > a3
    let (a1, a2, a3) = (prices[2], prices[1], prices[0]);
    let band = |i: usize| bands[i].expect("observed price has a band");
    let (lmin, lmax) = (bounds.lambda_min, bounds.lambda_max);
    Ok(match which {
        StaticCondition::HighestUnobserved => {
            let (b2, b3) = (band(1), band(0));
            a2 * b2.upper > a3 * b3.upper
                && a1 * (b2.upper + lmin) >= a2 * b2.upper + (a3 * b3.lower).max(a2 * b2.lower)
        }
        StaticCondition::MiddleUnobserved => {
            let (b1, b3) = (band(2), band(0));
            a1 * b1.upper > a2 * b3.upper
                && a2 * b1.lower >= a3 * b3.lower
                && a2 * (b3.upper + b1.lower) >= a1 * (b1.upper + b1.lower)
        }
        StaticCondition::LowestUnobserved => {
            let (b1, b2) = (band(2), band(1));
            a1 * b1.upper <= a2 * b2.upper
                && a2 * b2.upper <= a3 * lmax
                && a2 * b2.upper + (a1 * b1.lower).max(a2 * b2.lower) <= a3 * (lmax + b2.lower)
        }
    })
}

use crate::error::{PricingError, Result};
use crate::mdp::poisson::q_value;
use crate::mdp::{PolicyTable, PricingModel, QTable, StateDistribution, ValueTable};
use crate::select::{argmax_high, argmin_low};

/// Q-function, value function and greedy policy from backward induction.
#[derive(Debug, Clone)]
pub struct Solution {
    pub q: QTable,
    pub v: ValueTable,
    pub policy: PolicyTable,
}

/// Value of a fixed policy: the full table and its expectation under the
/// initial inventory law.
#[derive(Debug, Clone)]
pub struct PolicyValue {
    pub v: ValueTable,
    pub expected: f64,
}

#[derive(Clone, Copy)]
enum Objective {
    Best,
    Worst,
}

fn solve_extremal(model: &PricingModel, objective: Objective) -> Solution {
    let (horizon, cap, k) = (model.horizon(), model.max_inventory(), model.num_prices());
    let mut q = QTable::zeros(horizon, cap, k);
    let mut v = ValueTable::zeros(horizon, cap);
    let mut choice = vec![0usize; horizon * (cap + 1)];

    for t in (0..horizon).rev() {
        let v_next = v.row(t + 1).to_vec();
        for x in 0..=cap {
            let row = q.row_mut(t, x);
            for (a, slot) in row.iter_mut().enumerate() {
                *slot = q_value(x, model.price(a), model.lambda(t, a), &v_next);
            }
            let scored = row.iter().copied().enumerate();
            let (best, value) = match objective {
                Objective::Best => argmax_high(scored),
                Objective::Worst => argmin_low(scored),
            }
            .expect("price grid is non-empty");
            choice[t * (cap + 1) + x] = best;
            v.set(t, x, value);
        }
    }

    let policy = PolicyTable::from_choices(horizon, cap, k, |t, x| choice[t * (cap + 1) + x]);
    Solution { q, v, policy }
}

/// Optimal pricing by backward induction over the full price grid. Ties in
/// the argmax go to the higher price.
pub fn solve_optimal(model: &PricingModel) -> Solution {
    solve_extremal(model, Objective::Best)
}

/// The value-minimizing policy (ties to the lower price).
pub fn solve_worst(model: &PricingModel) -> Solution {
    solve_extremal(model, Objective::Worst)
}

fn check_init(model: &PricingModel, init: &StateDistribution) -> Result<()> {
    if init.max_inventory() != model.max_inventory() {
        return Err(PricingError::ShapeMismatch(format!(
            "initial distribution covers 0..={}, model has cap {}",
            init.max_inventory(),
            model.max_inventory()
        )));
    }
    Ok(())
}

/// Exact value of `policy` by fixed-policy backward induction.
pub fn evaluate_policy_exact(
    model: &PricingModel,
    policy: &PolicyTable,
    init: &StateDistribution,
) -> Result<PolicyValue> {
    let (horizon, cap, k) = (model.horizon(), model.max_inventory(), model.num_prices());
    policy.check_shape(horizon, cap, k)?;
    policy.validate()?;
    check_init(model, init)?;

    let mut v = ValueTable::zeros(horizon, cap);
    for t in (0..horizon).rev() {
        let v_next = v.row(t + 1).to_vec();
        for x in 0..=cap {
            let value: f64 = policy
                .row(t, x)
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(a, &p)| p * q_value(x, model.price(a), model.lambda(t, a), &v_next))
                .sum();
            v.set(t, x, value);
        }
    }
    let expected = init.expectation(|x| v.get(0, x));
    Ok(PolicyValue { v, expected })
}

/// Laws of the inventory level at periods `0..=horizon` when `policy` runs
/// from `init`. Stock never replenishes and zero is absorbing.
pub fn forward_state_distribution(
    model: &PricingModel,
    policy: &PolicyTable,
    init: &StateDistribution,
) -> Result<Vec<StateDistribution>> {
    let (horizon, cap, k) = (model.horizon(), model.max_inventory(), model.num_prices());
    policy.check_shape(horizon, cap, k)?;
    check_init(model, init)?;

    let mut out = Vec::with_capacity(horizon + 1);
    out.push(init.clone());
    for t in 0..horizon {
        let cur = out[t].mass();
        let mut next = vec![0.0; cap + 1];
        for (x, &m) in cur.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            if x == 0 {
                next[0] += m;
                continue;
            }
            for (a, &pa) in policy.row(t, x).iter().enumerate() {
                if pa == 0.0 {
                    continue;
                }
                let w = m * pa;
                let lambda = model.lambda(t, a);
                let mut p = (-lambda).exp();
                let mut cdf = 0.0;
                for d in 0..x {
                    next[x - d] += w * p;
                    cdf += p;
                    p *= lambda / (d + 1) as f64;
                }
                next[0] += w * (1.0 - cdf).clamp(0.0, 1.0);
            }
        }
        out.push(StateDistribution::from_raw(next));
    }
    Ok(out)
}

/// Marginal price distribution `P_t(a)` at each period under `policy`.
pub fn action_marginals(
    model: &PricingModel,
    policy: &PolicyTable,
    init: &StateDistribution,
) -> Result<Vec<Vec<f64>>> {
    let dists = forward_state_distribution(model, policy, init)?;
    Ok((0..model.horizon())
        .map(|t| {
            let mut m = vec![0.0; model.num_prices()];
            for (x, &mass) in dists[t].mass().iter().enumerate() {
                for (a, p) in policy.row(t, x).iter().enumerate() {
                    m[a] += mass * p;
                }
            }
            m
        })
        .collect())
}

/// `reachable[t][x]` is true when inventory `x` has positive probability at
/// period `t` under `policy`.
pub fn reachable_states(
    model: &PricingModel,
    policy: &PolicyTable,
    init: &StateDistribution,
) -> Result<Vec<Vec<bool>>> {
    let dists = forward_state_distribution(model, policy, init)?;
    Ok(dists[..model.horizon()]
        .iter()
        .map(|d| d.mass().iter().map(|&m| m > 0.0).collect())
        .collect())
}

//! Exact model-side machinery: the Poisson Bellman operator, backward
//! induction, exact policy evaluation and forward state propagation.

mod model;
mod poisson;
mod solve;
mod tables;

pub use model::PricingModel;
pub use poisson::{bellman_q, expected_sales, poisson_pmf_prefix, PoissonPrefix};
pub use solve::{
    action_marginals, evaluate_policy_exact, forward_state_distribution, reachable_states,
    solve_optimal, solve_worst, PolicyValue, Solution,
};
pub use tables::{PolicyTable, QTable, StateDistribution, ValueTable};

pub(crate) use model::{price_index, validate_prices};
pub(crate) use poisson::{check_lambda, q_value};

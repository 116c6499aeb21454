//! Offline dynamic pricing with Poisson demand and finite inventory.
//!
//! The crate is organised bottom-up:
//!
//! * [`mdp`] solves and evaluates the finite-horizon pricing MDP exactly.
//! * [`simulation`] generates reproducible offline datasets under behavior
//!   policies.
//! * [`identification`] turns a dataset into demand estimates and
//!   partial-identification intervals, including for prices that were never
//!   charged.
//! * [`learners`] contains the greedy, vanilla pessimistic, refined
//!   pessimistic and opportunistic (minimax-regret) policy learners.
//! * [`analysis`] holds numerical checks of the regret decomposition, bound
//!   components, pessimism and Lipschitz properties.
//! * [`experiments`] wires everything into replicated experiments.
//!
//! Periods are indexed from 0 in the API (`t = 0` is the first selling
//! period); CSV exports write them 1-based.

pub mod analysis;
pub mod error;
pub mod experiments;
pub mod identification;
pub mod learners;
pub mod mdp;
pub mod simulation;

mod select;

pub use error::{PricingError, Result};
pub use identification::{
    estimate_lambdas, refined_intervals, DemandBounds, Interval, IntervalSet, LambdaEstimates,
};
pub use learners::{LearnerConfig, LearnerOutput, Method};
pub use mdp::{
    evaluate_policy_exact, forward_state_distribution, solve_optimal, solve_worst, PolicyTable,
    PricingModel, QTable, StateDistribution, ValueTable,
};
pub use simulation::{generate_dataset, scenario_behavior, OfflineDataset, SeededRng};

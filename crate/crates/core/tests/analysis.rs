mod common;

use offline_pricing::analysis::{
    bellman_residuals, bound_components, decompose, decomposition_check, lipschitz_check, pessimism_validity,
    policy_values, static_condition_check, StaticCondition,
};
use offline_pricing::identification::Interval;
use offline_pricing::learners::{opportunistic_from_intervals, refined_from_intervals};
use offline_pricing::mdp::{action_marginals, solve_optimal};
use offline_pricing::simulation::OfflineDataset;
use offline_pricing::{
    estimate_lambdas, generate_dataset, refined_intervals, scenario_behavior, DemandBounds, IntervalSet,
    PolicyTable, PricingModel, QTable, SeededRng, StateDistribution,
};
use rand::Rng;

fn random_policy(r: &mut rand_chacha::ChaCha8Rng, model: &PricingModel, stochastic: bool) -> PolicyTable {
    let (h, cap, k) = (model.horizon(), model.max_inventory(), model.num_prices());
    if !stochastic {
        let picks: Vec<usize> = (0..h * (cap + 1)).map(|_| r.gen_range(0..k)).collect();
        return PolicyTable::from_choices(h, cap, k, |t, x| picks[t * (cap + 1) + x]);
    }
    let mut probs = Vec::with_capacity(h * (cap + 1) * k);
    for _ in 0..h * (cap + 1) {
        let w: Vec<f64> = (0..k).map(|_| r.gen_range(0.0..1.0)).collect();
        let s: f64 = w.iter().sum();
        probs.extend(w.iter().map(|v| v / s));
    }
    PolicyTable::from_probs(h, cap, k, probs).unwrap()
}

#[test]
fn decomposition_holds_for_arbitrary_estimates() {
    let mut r = common::rng(21);
    for i in 0..50 {
        let (h, cap, k) = (r.gen_range(1..5), r.gen_range(1..12), r.gen_range(1..5));
        let model = common::random_model(&mut r, h, cap, k);
        let mut q = QTable::zeros(h, cap, k);
        for t in 0..h {
            for x in 0..=cap {
                for a in 0..k {
                    q.set(t, x, a, if x == 0 { 0.0 } else { r.gen_range(-20.0..80.0) });
                }
            }
        }
        let pi_hat = random_policy(&mut r, &model, i % 2 == 0);
        let optimal = if i % 3 == 0 { random_policy(&mut r, &model, true) } else { solve_optimal(&model).policy };
        let x0 = r.gen_range(0..=cap);
        let init = StateDistribution::point_mass(cap, x0);
        let rep = decompose(&model, &q, &pi_hat, &optimal, &init).unwrap();
        assert!(rep.residual <= 1e-8, "case {i}: {rep:?}");
    }
}

fn covering_replications(model: &PricingModel, scenario: usize, reps: u64, n: usize) -> Vec<(OfflineDataset, IntervalSet)> {
    let behavior = scenario_behavior(model, scenario).unwrap();
    let bounds = DemandBounds::of_model(model);
    (0..reps)
        .filter_map(|rep| {
            let data = generate_dataset(model, &behavior, n, &SeededRng::new(100), rep).unwrap();
            let set = refined_intervals(&estimate_lambdas(&data, 3.0).unwrap(), bounds);
            set.covers(model).then_some((data, set))
        })
        .collect()
}

#[test]
fn covering_intervals_give_pessimistic_residual_signs() {
    let model = PricingModel::benchmark();
    let optimal = solve_optimal(&model).policy;
    let mut seen = 0;
    for scenario in [1, 2, 4] {
        for (_, set) in covering_replications(&model, scenario, 15, 200) {
            seen += 1;
            let pess = refined_from_intervals(&set, 15, 1001).unwrap();
            let v_hat = policy_values(&pess.q, &pess.policy).unwrap();
            assert_eq!(v_hat, pess.v);
            let l = bellman_residuals(&model, &pess.q, &pess.v).unwrap();
            let min_l = l.values().iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(min_l >= -1e-10, "scenario {scenario}: min l {min_l}");
            let rep = decomposition_check(&model, &pess, &optimal).unwrap();
            assert!(rep.residual <= 1e-8);
            assert!(rep.j2 >= -1e-10 && rep.j3 <= 1e-10, "{rep:?}");
            assert!(rep.regret <= rep.j1 + 1e-9);
        }
    }
    assert!(seen >= 10, "only {seen} covering replications");
}

#[test]
fn opportunistic_decomposition_on_covering_replications() {
    let model = PricingModel::benchmark();
    let optimal = solve_optimal(&model).policy;
    for (_, set) in covering_replications(&model, 2, 30, 200) {
        let opp = opportunistic_from_intervals(&set, 15, 1001).unwrap();
        let rep = decomposition_check(&model, &opp, &optimal).unwrap();
        assert!(rep.residual <= 1e-8, "{rep:?}");
        assert!(rep.j3 <= 1e-10, "{rep:?}");
    }
}

#[test]
fn optimal_behavior_leaves_no_uncovered_term() {
    let model = PricingModel::benchmark();
    let optimal = solve_optimal(&model).policy;
    let init = StateDistribution::point_mass(15, 15);
    let p_opt = action_marginals(&model, &optimal, &init).unwrap();
    let data = generate_dataset(&model, &optimal, 20, &SeededRng::new(4), 0).unwrap();
    let rep = bound_components(&model, &data, &p_opt, &p_opt, 1.0).unwrap();
    assert!(rep.covered.iter().flatten().all(|&c| c));
    assert_eq!(rep.term2, 0.0);
    assert!(rep.term1 > 0.0);
    assert!(rep.probability_floor < 1.0);
    let est = estimate_lambdas(&data, 1.0).unwrap();
    for t in 0..4 {
        for a in est.observed(t) {
            let e = rep.eta[t][a].unwrap();
            assert!((e - 4.0 * est.delta(t, a).unwrap()).abs() < 1e-12);
        }
    }
}

#[test]
fn uncovered_optimal_price_uses_neighbour_rates() {
    // Three prices; the middle one is charged by the optimal policy only.
    let model = PricingModel::time_invariant(1, 3, vec![8.0, 9.0, 10.0], vec![6.0, 4.0, 2.5], 1.0, 10.0).unwrap();
    let steps = |k: usize, d: u64| offline_pricing::simulation::Trajectory {
        steps: vec![offline_pricing::simulation::Step { inventory: 3, price_index: k, demand: d }],
    };
    let data = OfflineDataset::from_trajectories(
        model.prices().to_vec(),
        1,
        3,
        vec![steps(0, 5), steps(0, 7), steps(2, 2), steps(2, 3), steps(2, 3)],
    )
    .unwrap();
    let p_opt = vec![vec![0.0, 1.0, 0.0]];
    let p_b = vec![vec![0.4, 0.0, 0.6]];
    let rep = bound_components(&model, &data, &p_opt, &p_b, 1.0).unwrap();
    let d8 = (2f64.ln() / 2.0).sqrt();
    let d10 = (3f64.ln() / 3.0).sqrt();
    let eta = 6.0 - 2.5 + 2.0 * d8 + 2.0 * d10;
    assert!((rep.eta[0][1].unwrap() - eta).abs() < 1e-12);
    assert!((rep.term2 - eta).abs() < 1e-12);
    assert_eq!(rep.term1, 0.0);
    assert_eq!(rep.covered[0], vec![true, false, true]);
    assert!((rep.eta[0][0].unwrap() - 4.0 * d8).abs() < 1e-12);
    let kappa = 0.6f64.powi(5) + 0.4f64.powi(5);
    assert!((rep.kappa[0] - kappa).abs() < 1e-15);
    assert!((rep.probability_floor - (1.0 - 0.5 - 1.0 / 3.0 - kappa)).abs() < 1e-12);

    let mut csv = Vec::new();
    rep.write_eta_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("t,price,covered,eta\n1,8.0,true,"));
}

#[test]
fn one_sided_neighbours_follow_the_three_cases() {
    let model = PricingModel::time_invariant(1, 3, vec![8.0, 9.0, 10.0], vec![6.0, 4.0, 2.5], 1.0, 10.0).unwrap();
    let traj = |k: usize| offline_pricing::simulation::Trajectory {
        steps: vec![offline_pricing::simulation::Step { inventory: 3, price_index: k, demand: 4 }],
    };
    let data = OfflineDataset::from_trajectories(model.prices().to_vec(), 1, 3, vec![traj(1), traj(1)]).unwrap();
    let p = vec![vec![1.0 / 3.0; 3]];
    let rep = bound_components(&model, &data, &p, &p, 1.0).unwrap();
    let d9 = (2f64.ln() / 2.0).sqrt();
    // Below the only observed price: lambda_max - lambda(9) + 2 delta(9).
    assert!((rep.eta[0][0].unwrap() - (10.0 - 4.0 + 2.0 * d9)).abs() < 1e-12);
    // Above it: lambda(9) + 2 delta(9).
    assert!((rep.eta[0][2].unwrap() - (4.0 + 2.0 * d9)).abs() < 1e-12);
}

#[test]
fn zero_probability_optimal_prices_contribute_nothing() {
    let model = PricingModel::benchmark();
    let behavior = scenario_behavior(&model, 1).unwrap();
    let data = generate_dataset(&model, &behavior, 20, &SeededRng::new(6), 0).unwrap();
    let init = StateDistribution::point_mass(15, 15);
    let p_b = action_marginals(&model, &behavior, &init).unwrap();
    let zero = vec![vec![0.0; 3]; 4];
    let rep = bound_components(&model, &data, &zero, &p_b, 1.0).unwrap();
    assert_eq!((rep.term1, rep.term2), (0.0, 0.0));
}

#[test]
fn pessimism_holds_with_true_rates_inside() {
    let model = PricingModel::benchmark();
    let exact = refined_from_intervals(&IntervalSet::exact(&model), 15, 11).unwrap();
    assert_eq!(pessimism_validity(&model, &exact).unwrap().violations, 0);

    // Wide intervals around the truth.
    let wide: Vec<Vec<Interval>> = (0..4)
        .map(|t| {
            model
                .lambda_row(t)
                .iter()
                .map(|&l| Interval { lower: (l - 0.7).max(1.0), upper: l + 0.4, lower_source: None, upper_source: None, clamped: false })
                .collect()
        })
        .collect();
    let set = IntervalSet::from_intervals(model.prices().to_vec(), wide, DemandBounds::of_model(&model)).unwrap();
    let out = refined_from_intervals(&set, 15, 1001).unwrap();
    let rep = pessimism_validity(&model, &out).unwrap();
    assert_eq!(rep.violations, 0);
    assert_eq!(rep.cells, 4 * 16 * 3);
}

#[test]
fn zero_width_bands_are_reported_without_assertion() {
    let model = PricingModel::benchmark();
    let behavior = scenario_behavior(&model, 2).unwrap();
    let data = generate_dataset(&model, &behavior, 20, &SeededRng::new(8), 0).unwrap();
    let set = refined_intervals(&estimate_lambdas(&data, 0.0).unwrap(), DemandBounds::of_model(&model));
    let out = refined_from_intervals(&set, 15, 101).unwrap();
    let rep = pessimism_validity(&model, &out).unwrap();
    assert!(rep.fraction >= 0.0 && rep.fraction <= 1.0);
}

#[test]
fn lipschitz_ratio_is_bounded_and_stable() {
    let model = PricingModel::benchmark();
    let small = lipschitz_check(&model, 10_000, 1).unwrap();
    let large = lipschitz_check(&model, 100_000, 2).unwrap();
    assert!(small.worst_ratio > 0.0);
    assert!(large.worst_ratio <= small.analytic_bound);
    assert!(large.worst_ratio <= 1.25 * small.worst_ratio, "{small:?} {large:?}");
}

#[test]
fn nonzero_value_of_empty_stock_is_rejected() {
    let model = PricingModel::benchmark();
    let sol = solve_optimal(&model);
    let mut q = sol.q.clone();
    q.set(1, 0, 0, 3.0);
    q.set(1, 0, 1, 3.0);
    q.set(1, 0, 2, 3.0);
    let init = StateDistribution::point_mass(15, 15);
    assert!(decompose(&model, &q, &sol.policy, &sol.policy, &init).is_err());
}

#[test]
fn middle_price_condition_is_infeasible() {
    // The first inequality asks a1 u1 > a2 u3; the third implies
    // a2 u3 >= a1 u1 + (a1 - a2) l1 > a1 u1.
    let mut r = common::rng(31);
    for _ in 0..200_000 {
        let f = common::random_static_fixture(&mut r, 1);
        assert!(!static_condition_check(&f.prices, &f.bands, f.bounds, StaticCondition::MiddleUnobserved).unwrap());
    }
}

#[test]
fn learner_matches_enumeration_for_any_hidden_price() {
    let mut r = common::rng(32);
    for i in 0..150 {
        let f = common::random_static_fixture(&mut r, i % 3);
        let set = IntervalSet::from_bands(f.prices.clone(), vec![f.bands.clone()], f.bounds).unwrap();
        let opp = opportunistic_from_intervals(&set, 200, 1001).unwrap();
        assert_eq!(opp.policy.action(0, 200), Some(common::brute_force_static_choice(&f)));
    }
}

#[test]
fn static_conditions_agree_with_enumeration() {
    let mut r = common::rng(30);
    for which in [StaticCondition::HighestUnobserved, StaticCondition::LowestUnobserved] {
        let hidden = which.unobserved_index();
        let mut hits = 0;
        for _ in 0..200_000 {
            let f = common::random_static_fixture(&mut r, hidden);
            if static_condition_check(&f.prices, &f.bands, f.bounds, which).unwrap() {
                hits += 1;
                assert_eq!(common::brute_force_static_choice(&f), hidden, "{which:?}");
                let set = IntervalSet::from_bands(f.prices.clone(), vec![f.bands.clone()], f.bounds).unwrap();
                let opp = opportunistic_from_intervals(&set, 200, 1001).unwrap();
                assert_eq!(opp.policy.action(0, 200), Some(hidden), "{which:?}");
                if hits == 25 {
                    break;
                }
            }
        }
        assert_eq!(hits, 25, "{which:?}: too few fixtures");
    }
}

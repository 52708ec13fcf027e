//! End-to-end checks of the scheduling solve against brute force, plus the
//! anytime behavior of its bounds.

mod common;

use owfkit_core::fixtures;
use owfkit_core::formulation::{RelaxationKind, RelaxationOptions};
use owfkit_core::hydraulics::simulate;
use owfkit_core::preprocess::BoundsStore;
use owfkit_core::solver::{solve_owf, Limits, Termination};

fn options(kind: RelaxationKind) -> RelaxationOptions {
    RelaxationOptions { kind, xi: 1.0, ..RelaxationOptions::default() }
}

#[test]
fn pump_tank_solve_matches_brute_force() {
    let inst = fixtures::pump_tank_instance(4);
    let oracle = common::brute_force(&inst);
    let oracle_best = oracle.best_cost.expect("instance has feasible schedules");

    let bounds = BoundsStore::naive(&inst);
    let result = solve_owf(&inst, &options(RelaxationKind::OuterApproximation), &bounds, &[], &Limits::default()).unwrap();
    assert_eq!(result.termination, Termination::Converged);
    let ub = result.upper_bound().expect("incumbent");
    assert!(
        (ub - oracle_best).abs() <= 1e-6 * oracle_best.abs().max(1.0),
        "ub {ub} vs oracle {oracle_best}"
    );
    let lb = result.lower_bound.expect("bound");
    assert!(lb <= oracle_best + 1e-6);

    // the incumbent re-simulates feasible at the recorded cost
    let (schedule, cost) = result.incumbent.unwrap();
    let sim = simulate(&inst, &schedule).unwrap();
    assert!(sim.feasible);
    assert!((sim.cost(&inst, &schedule) - cost).abs() <= 1e-8);
}

#[test]
fn infeasible_instance_is_certified() {
    let inst = fixtures::infeasible_instance();
    let bounds = BoundsStore::naive(&inst);
    let result = solve_owf(&inst, &options(RelaxationKind::OuterApproximation), &bounds, &[], &Limits::default()).unwrap();
    assert_eq!(result.termination, Termination::InfeasibleCertified);
    assert!(result.incumbent.is_none());
}

#[test]
fn zero_price_feasible_instance_closes_at_zero() {
    let inst = fixtures::valve_junction_instance(2);
    let bounds = BoundsStore::naive(&inst);
    let result = solve_owf(&inst, &options(RelaxationKind::OuterApproximation), &bounds, &[], &Limits::default()).unwrap();
    assert_eq!(result.termination, Termination::Converged);
    assert_eq!(result.upper_bound(), Some(0.0));
    assert_eq!(result.lower_bound, Some(0.0));
}

#[test]
fn direction_relaxation_reaches_the_same_optimum() {
    let inst = fixtures::pump_tank_instance(3);
    let oracle = common::brute_force(&inst);
    let bounds = BoundsStore::naive(&inst);
    let mut opts = options(RelaxationKind::OuterApproximation);
    opts.relax_directions = true;
    let result = solve_owf(&inst, &opts, &bounds, &[], &Limits::default()).unwrap();
    assert_eq!(result.termination, Termination::Converged);
    let ub = result.upper_bound().unwrap();
    let best = oracle.best_cost.unwrap();
    assert!((ub - best).abs() <= 1e-6 * best.abs().max(1.0), "{ub} vs {best}");
}

#[test]
fn piecewise_relaxation_agrees_on_small_instance() {
    let inst = fixtures::series_pumps_instance(2);
    let oracle = common::brute_force(&inst);
    let bounds = BoundsStore::naive(&inst);
    let result = solve_owf(&inst, &options(RelaxationKind::Piecewise), &bounds, &[], &Limits::default()).unwrap();
    match oracle.best_cost {
        Some(best) => {
            assert_eq!(result.termination, Termination::Converged);
            let ub = result.upper_bound().unwrap();
            assert!((ub - best).abs() <= 1e-6 * best.abs().max(1.0), "{ub} vs {best}");
        }
        None => assert_eq!(result.termination, Termination::InfeasibleCertified),
    }
}

#[test]
fn node_limit_yields_partial_certificate() {
    let inst = fixtures::pump_tank_instance(4);
    let bounds = BoundsStore::naive(&inst);
    let limits = Limits { node_limit: Some(1), ..Limits::default() };
    let result = solve_owf(&inst, &options(RelaxationKind::OuterApproximation), &bounds, &[], &limits).unwrap();
    assert_eq!(result.termination, Termination::LimitReached);
    if let (Some(lb), Some(ub)) = (result.lower_bound, result.upper_bound()) {
        assert!(lb <= ub + 1e-6);
    }
}

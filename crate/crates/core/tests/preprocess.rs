//! Bound tightening and cut generation, checked against closed forms on tiny
//! networks and against exhaustive simulation for soundness.

mod common;

use owfkit_core::cuts::Cut;
use owfkit_core::fixtures::{self, InstanceBuilder};
use owfkit_core::formulation::{lift_assignment, Partition, RelaxationKind, RelaxationOptions};
use owfkit_core::model::{Dir, Sense, VarKey};
use owfkit_core::network::Instance;
use owfkit_core::preprocess::{
    obbt, obcg_binary_binary, obcg_binary_continuous, BoundsStore, ObbtConfig, ObbtVariant,
    ObcgConfig, PreprocessError,
};
use owfkit_core::solver::build_relaxation_model;

fn config(variant: ObbtVariant) -> ObbtConfig {
    let mut c = ObbtConfig::new(variant);
    c.max_iterations = 3;
    c.time_budget_s = None;
    c
}

#[test]
fn single_pipe_flow_pins_to_demand() {
    let inst = fixtures::single_pipe_instance();
    let bounds = BoundsStore::naive(&inst);
    assert_eq!(bounds.dir(0, 0, Dir::Pos), (0.0, 1.0));
    let tightened = obbt(&inst, &bounds, &config(ObbtVariant::BtSr)).unwrap();
    let (lo, hi) = tightened.dir(0, 0, Dir::Pos);
    assert!(lo <= 0.1 && 0.1 <= hi, "[{lo}, {hi}] must contain the forced flow");
    assert!(hi - lo < 1e-4, "interval [{lo}, {hi}] should pin the flow");
    // the reverse direction is impossible
    assert_eq!(tightened.direction(0, 0), (1.0, 1.0));
}

#[test]
fn fixpoint_reached_after_one_repeat() {
    let inst = fixtures::single_pipe_instance();
    let bounds = BoundsStore::naive(&inst);
    let once = obbt(&inst, &bounds, &config(ObbtVariant::BtSr)).unwrap();
    let mut cfg = config(ObbtVariant::BtSr);
    cfg.max_iterations = 1;
    let again = obbt(&inst, &once, &cfg).unwrap();
    assert_eq!(once, again);
}

#[test]
fn hopeless_pump_status_is_fixed_off() {
    // the pump tops out at 30 m of head, far below the junction's minimum
    let mut b = InstanceBuilder::new(vec![3600.0]);
    let r = b.reservoir("low", 10.0);
    let d = b.demand("high", vec![0.0], 50.0, 60.0);
    b.pump("weak", r, d, (20.0, -100.0, 2.0), 0.3, 0.0, vec![1.0], vec![1.0]);
    let inst = b.build();
    let tightened = obbt(&inst, &BoundsStore::naive(&inst), &config(ObbtVariant::BtSr)).unwrap();
    assert_eq!(tightened.status(0, 0), (0.0, 0.0));
}

#[test]
fn variant_chain_never_loosens() {
    let inst = fixtures::pump_tank_instance(3);
    let naive = BoundsStore::naive(&inst);
    let sr = obbt(&inst, &naive, &config(ObbtVariant::BtSr)).unwrap();
    let ss = obbt(&inst, &sr, &config(ObbtVariant::BtSs)).unwrap();
    let sq = obbt(&inst, &ss, &config(ObbtVariant::BtSq)).unwrap();
    assert!(sr.contained_in(&naive));
    assert!(ss.contained_in(&sr));
    assert!(sq.contained_in(&ss));
}

#[test]
fn full_horizon_variants_run_and_stay_sound() {
    let inst = fixtures::pump_tank_instance(2);
    let naive = BoundsStore::naive(&inst);
    for variant in [ObbtVariant::BtTr, ObbtVariant::BtTs] {
        let mut cfg = config(variant);
        cfg.max_iterations = 1;
        let tightened = obbt(&inst, &naive, &cfg).unwrap();
        assert!(tightened.contained_in(&naive));
        assert_bounds_sound(&inst, &tightened);
    }
}

#[test]
fn infeasible_instance_is_detected_at_the_root() {
    let inst = fixtures::infeasible_instance();
    let err = obbt(&inst, &BoundsStore::naive(&inst), &config(ObbtVariant::BtSr)).unwrap_err();
    assert!(matches!(err, PreprocessError::InfeasibleInstance));
}

/// Every simulator-feasible schedule's lifted values respect the store.
fn assert_bounds_sound(instance: &Instance, bounds: &BoundsStore) {
    let oracle = common::brute_force(instance);
    let options = RelaxationOptions { kind: RelaxationKind::OuterApproximation, xi: 1.0, ..Default::default() };
    let (model, partition) = build_relaxation_model(instance, &options, bounds, &[]).unwrap();
    for (schedule, sim) in &oracle.feasible {
        let x = lift_assignment(instance, &model, bounds, &partition, schedule, sim).unwrap();
        let viol = model.max_violation(&x);
        assert!(viol <= 1e-7, "sound lift violates tightened model by {viol}");
    }
}

#[test]
fn tightened_bounds_respect_every_feasible_schedule() {
    for inst in [fixtures::pump_tank_instance(3), fixtures::valve_junction_instance(2)] {
        let naive = BoundsStore::naive(&inst);
        let sr = obbt(&inst, &naive, &config(ObbtVariant::BtSr)).unwrap();
        assert_bounds_sound(&inst, &sr);
        let sq = obbt(&inst, &sr, &config(ObbtVariant::BtSq)).unwrap();
        assert_bounds_sound(&inst, &sq);
    }
}

#[test]
fn bounds_store_round_trips_json() {
    let inst = fixtures::pump_tank_instance(2);
    let bounds = BoundsStore::naive(&inst);
    let text = bounds.to_json();
    assert_eq!(BoundsStore::from_json(&text).unwrap(), bounds);
}

#[test]
fn series_pumps_yield_ordering_cuts() {
    let inst = fixtures::series_pumps_instance(2);
    let bounds = BoundsStore::naive(&inst);
    let out = obcg_binary_binary(&inst, &bounds, false, &ObcgConfig::default()).unwrap();
    let pumps = inst.pump_indices();
    let ordering = |a: usize, b: usize, cuts: &[Cut]| -> bool {
        cuts.iter().any(|c| {
            c.sense == Sense::Le
                && c.rhs == 0.0
                && c.terms.contains(&(VarKey::Status { link: a, k: 0 }, 1.0))
                && c.terms.contains(&(VarKey::Status { link: b, k: 0 }, -1.0))
        })
    };
    // the second stage cannot run without the first, and vice versa
    assert!(ordering(pumps[1], pumps[0], &out.cuts), "missing z2 <= z1");
    assert!(ordering(pumps[0], pumps[1], &out.cuts), "missing z1 <= z2");
    // replicated across the horizon
    let per_step = out.cuts.iter().filter(|c| matches!(c.scope, owfkit_core::cuts::CutScope::Step(1))).count();
    assert!(per_step > 0);
}

#[test]
fn independent_parallel_pumps_get_no_ordering_cut() {
    // the demand rests at the second step, so fixing either pump off leaves
    // the other genuinely free
    let mut inst = fixtures::parallel_pumps_instance(2, 2);
    for node in &mut inst.nodes {
        if let owfkit_core::network::NodeKind::Demand(d) = &mut node.kind {
            if d.rate.iter().any(|&r| r != 0.0) {
                d.rate[1] = 0.0;
            }
        }
    }
    let bounds = BoundsStore::naive(&inst);
    let out = obcg_binary_binary(&inst, &bounds, false, &ObcgConfig::default()).unwrap();
    let pumps = inst.pump_indices();
    let between_pumps = out.cuts.iter().any(|c| {
        let on_pumps = c
            .terms
            .iter()
            .filter(|(key, _)| matches!(key, VarKey::Status { link, .. } if pumps.contains(link)))
            .count();
        on_pumps == 2
    });
    assert!(!between_pumps, "either pump can run alone; no pairwise status cut is implied");
}

#[test]
fn mandatory_valve_fires_the_both_one_branch() {
    // the valve is the only path to a demand that never rests; two parallel
    // feed pipes keep every other fixing feasible
    let mut b = InstanceBuilder::new(vec![60.0; 2]);
    let r = b.reservoir("src", 30.0);
    let j = b.junction("mid", 0.0, 35.0);
    let d = b.demand("load", vec![-0.04; 2], 0.0, 35.0);
    b.pipe("feed1", r, j, 100.0, 0.005, 0.5);
    b.pipe("feed2", r, j, 100.0, 0.005, 0.5);
    let valve = b.valve("gate", j, d, 0.5);
    let inst = b.build();
    let bounds = BoundsStore::naive(&inst);
    let out = obcg_binary_binary(&inst, &bounds, false, &ObcgConfig::default()).unwrap();
    // fixing a feed pipe's direction to zero still forces the valve open, so
    // the both-one branch emits z_gate + y >= 1 covering cuts
    let fired = out.cuts.iter().any(|c| {
        c.sense == Sense::Ge
            && c.rhs == 1.0
            && c.terms.contains(&(VarKey::Status { link: valve, k: 0 }, 1.0))
    });
    assert!(fired, "expected covering cuts naming the mandatory valve");
}

#[test]
fn closed_valve_pins_junction_head_to_reservoir() {
    let mut b = InstanceBuilder::new(vec![60.0; 2]);
    let r = b.reservoir("src", 30.0);
    let j = b.junction("mid", 0.0, 35.0);
    let d = b.demand("load", vec![-0.04, 0.0], 0.0, 35.0);
    b.pipe("feed", r, j, 100.0, 0.005, 0.5);
    let valve = b.valve("gate", j, d, 0.5);
    let inst = b.build();
    let jid = inst.node_index("mid").unwrap();
    let bounds = BoundsStore::naive(&inst);
    let out = obcg_binary_continuous(&inst, &bounds, &ObcgConfig::default()).unwrap();

    // collect the conditional cuts pairing the junction head with the valve
    // status and intersect them at z = 0
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for cut in &out.cuts {
        if !matches!(cut.scope, owfkit_core::cuts::CutScope::Step(0)) {
            continue;
        }
        let head_coef = cut.terms.iter().find(|(key, _)| *key == VarKey::Head { node: jid, k: 0 });
        let z_coef = cut.terms.iter().find(|(key, _)| *key == VarKey::Status { link: valve, k: 0 });
        if let (Some(&(_, hc)), Some(_)) = (head_coef, z_coef) {
            assert!((hc - 1.0).abs() < 1e-12);
            match cut.sense {
                Sense::Ge => lo = lo.max(cut.rhs),
                Sense::Le => hi = hi.min(cut.rhs),
                Sense::Eq => {}
            }
        }
    }
    assert!(lo > 29.9 && hi < 30.1, "head window at closed valve: [{lo}, {hi}]");
}

#[test]
fn forced_direction_becomes_a_fixing_not_a_cut() {
    // the single pipe must always run toward its consumer, so every pairing
    // against its direction collapses to the fixing y = 1
    let inst = fixtures::single_pipe_instance();
    let bounds = BoundsStore::naive(&inst);
    let out = obcg_binary_continuous(&inst, &bounds, &ObcgConfig::default()).unwrap();
    assert!(out.cuts.is_empty());
    assert!(out
        .fixings
        .iter()
        .any(|f| f.key == VarKey::Direction { link: 0, k: 0 } && f.value));
}

#[test]
fn conditional_bound_cuts_hold_on_every_feasible_schedule() {
    let inst = fixtures::valve_junction_instance(2);
    let bounds = BoundsStore::naive(&inst);
    let out = obcg_binary_continuous(&inst, &bounds, &ObcgConfig::default()).unwrap();
    assert!(!out.cuts.is_empty());
    let oracle = common::brute_force(&inst);
    assert!(!oracle.feasible.is_empty());
    let options = RelaxationOptions { kind: RelaxationKind::Piecewise, xi: 1.0, ..Default::default() };
    let (model, partition) = build_relaxation_model(&inst, &options, &bounds, &[]).unwrap();
    for (schedule, sim) in &oracle.feasible {
        let x = lift_assignment(&inst, &model, &bounds, &partition, schedule, sim).unwrap();
        for cut in &out.cuts {
            let slack = cut.slack(&model, &x).expect("cut keys resolve");
            assert!(slack >= -1e-7, "obcg cut violated by {slack}");
        }
    }
}

#[test]
fn obcg_output_round_trips_and_applies_fixings() {
    let inst = fixtures::series_pumps_instance(2);
    let bounds = BoundsStore::naive(&inst);
    let out = obcg_binary_binary(&inst, &bounds, true, &ObcgConfig::default()).unwrap();
    let text = out.to_json();
    let parsed = owfkit_core::preprocess::ObcgOutput::from_json(&text).unwrap();
    assert_eq!(parsed.cuts, out.cuts);

    let mut store = bounds.clone();
    out.apply_fixings(&inst, &mut store);
    assert!(store.contained_in(&bounds));

    // a partition built under the fixed bounds still covers everything
    let partition = Partition::build(&inst, &store, 1.0).unwrap();
    assert!(partition.get(0, 0, Dir::Pos).is_some());
}

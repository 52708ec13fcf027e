//! Shared helpers for the integration suites: exhaustive schedule
//! enumeration, an independent switching checker, and a tiny deterministic
//! random-network generator. The brute-force oracle only relies on the
//! simulator and this module's own reasoning, never on the relaxation or
//! search machinery it is used to check.

use std::collections::BTreeMap;

use owfkit_core::fixtures::InstanceBuilder;
use owfkit_core::hydraulics::{simulate, ControlState, Schedule, SimulationResult};
use owfkit_core::network::{Instance, LinkKind};

/// All `2^(controls × K)` schedules of an instance, in a fixed order.
pub fn enumerate_schedules(instance: &Instance) -> Vec<Schedule> {
    let controls = instance.controllable_indices();
    let horizon = instance.horizon();
    let bits = controls.len() * horizon;
    assert!(bits <= 20, "instance too large to enumerate");
    let mut schedules = Vec::with_capacity(1 << bits);
    for mask in 0..(1u64 << bits) {
        let mut steps = Vec::with_capacity(horizon);
        for k in 0..horizon {
            let mut status = BTreeMap::new();
            for (ci, &l) in controls.iter().enumerate() {
                let bit = k * controls.len() + ci;
                status.insert(l, (mask >> bit) & 1 == 1);
            }
            steps.push(ControlState::new(instance, status).unwrap());
        }
        schedules.push(Schedule { steps });
    }
    schedules
}

/// Independent re-statement of the switching limits: every interior on-run
/// must last at least the minimum on-time, every interior off-run at least
/// the minimum off-time, and starts are counted directly.
pub fn switching_ok(instance: &Instance, schedule: &Schedule) -> bool {
    let stamps = instance.time_stamps();
    let horizon = instance.horizon();
    for l in instance.pump_indices() {
        let pump = match &instance.links[l].kind {
            LinkKind::Pump(p) => p,
            _ => unreachable!(),
        };
        let z: Vec<bool> = (0..horizon).map(|k| schedule.steps[k].status(l).unwrap()).collect();
        let mut starts = 0u32;
        for k in 1..horizon {
            if z[k] && !z[k - 1] {
                starts += 1;
                // find the end of this on-run
                let mut end = k;
                while end < horizon && z[end] {
                    end += 1;
                }
                if end < horizon && stamps[end] - stamps[k] + 1e-9 < pump.min_on_secs {
                    return false;
                }
            }
            if !z[k] && z[k - 1] {
                let mut end = k;
                while end < horizon && !z[end] {
                    end += 1;
                }
                if end < horizon && stamps[end] - stamps[k] + 1e-9 < pump.min_off_secs {
                    return false;
                }
            }
        }
        if starts > pump.max_starts {
            return false;
        }
    }
    true
}

pub struct OracleOutcome {
    pub best_cost: Option<f64>,
    pub best_schedule: Option<Schedule>,
    /// Every feasible (schedule, trajectory) pair, for soundness sweeps.
    pub feasible: Vec<(Schedule, SimulationResult)>,
}

/// Exhaustive simulation over every switching-admissible schedule.
pub fn brute_force(instance: &Instance) -> OracleOutcome {
    let mut outcome = OracleOutcome { best_cost: None, best_schedule: None, feasible: Vec::new() };
    for schedule in enumerate_schedules(instance) {
        if !switching_ok(instance, &schedule) {
            continue;
        }
        let result = simulate(instance, &schedule).unwrap();
        if !result.feasible {
            continue;
        }
        let cost = result.cost(instance, &schedule);
        if outcome.best_cost.is_none_or(|c| cost < c) {
            outcome.best_cost = Some(cost);
            outcome.best_schedule = Some(schedule.clone());
        }
        outcome.feasible.push((schedule, result));
    }
    outcome
}

/// Splitmix-style deterministic generator for reproducible random tests.
pub struct Rng(u64);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng(seed.wrapping_add(0x9e3779b97f4a7c15))
    }
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * (self.next_u64() as f64 / u64::MAX as f64)
    }
    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }
    pub fn chance(&mut self, p: f64) -> bool {
        self.uniform(0.0, 1.0) < p
    }
}

/// A random small network: a reservoir spine with demands hanging off pipes,
/// a possible pump and valve, and random resistances. Controls are chosen by
/// the caller; all heads are generously bounded.
pub fn random_network(rng: &mut Rng) -> (Instance, ControlState) {
    let n_demands = 2 + rng.below(5); // 2..=6 demand nodes, ≤ 8 nodes total
    let mut b = InstanceBuilder::new(vec![600.0]);
    let source_head = rng.uniform(60.0, 120.0);
    let r = b.reservoir("r0", source_head);
    let mut nodes = vec![r];
    for i in 0..n_demands {
        let rate = if rng.chance(0.3) { 0.0 } else { -rng.uniform(0.005, 0.08) };
        let d = b.demand(&format!("d{i}"), vec![rate], -200.0, 400.0);
        nodes.push(d);
    }
    // spine of pipes guarantees connectivity
    for i in 1..nodes.len() {
        b.pipe(
            &format!("p{i}"),
            nodes[i - 1],
            nodes[i],
            rng.uniform(50.0, 1500.0),
            rng.uniform(1e-4, 5e-3),
            5.0,
        );
    }
    // a few random chords
    for extra in 0..rng.below(3) {
        let a = rng.below(nodes.len());
        let mut c = rng.below(nodes.len());
        if a == c {
            c = (c + 1) % nodes.len();
        }
        b.pipe(
            &format!("x{extra}"),
            nodes[a],
            nodes[c],
            rng.uniform(50.0, 1500.0),
            rng.uniform(1e-4, 5e-3),
            5.0,
        );
    }
    let mut controls = BTreeMap::new();
    if rng.chance(0.6) {
        // a booster pump into the last demand node
        let tail = nodes[rng.below(nodes.len() - 1)];
        let head = *nodes.last().unwrap();
        if tail != head {
            let pump = b.pump(
                "pm0",
                tail,
                head,
                (rng.uniform(10.0, 60.0), -rng.uniform(50.0, 400.0), 2.0),
                1.0,
                0.0,
                vec![1.0],
                vec![1.0],
            );
            controls.insert(pump, true);
        }
    }
    if rng.chance(0.4) {
        let a = rng.below(nodes.len());
        let c = (a + 1 + rng.below(nodes.len() - 1)) % nodes.len();
        let valve = b.valve("v0", nodes[a], nodes[c], 5.0);
        controls.insert(valve, rng.chance(0.7));
    }
    let instance = b.build();
    let state = ControlState::new(&instance, controls).unwrap();
    (instance, state)
}

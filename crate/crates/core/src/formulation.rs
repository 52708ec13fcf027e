//! MILP relaxation builders.
//!
//! `build_shared_constraints` transcribes the exact linear part of the
//! scheduling problem (head/flow bounds, tank volumes and Euler coupling,
//! valve and pump disjunctions, conservation, switching limits, and the cost
//! objective). `build_direction_decomposition` adds directed flows, direction
//! indicators, and directed head differences. On top of those,
//! `build_oa` adds tangent outer approximations plus secant bounds of the
//! loss/gain curves, and `build_pw` adds piecewise convex-combination
//! envelopes. Partition densities are controlled by the error tolerance ξ.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hydraulics::{Schedule, SimulationResult};
use crate::model::{Dir, MilpModel, ModelError, Sense, VarId, VarKey, VarKind};
use crate::network::{Instance, LinkIdx, LinkKind, NodeIdx, NodeKind};
use crate::preprocess::BoundsStore;

#[derive(Debug, Error)]
pub enum FormulationError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("partition tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("missing partition for link {link} step {k} direction {dir:?}")]
    MissingPartition { link: LinkIdx, k: usize, dir: Dir },
    #[error("partition for link {link} step {k} needs at least 2 points")]
    DegeneratePartition { link: LinkIdx, k: usize },
    #[error("inconsistent bounds: {0}")]
    InconsistentBounds(String),
    #[error("lift: {0}")]
    Lift(String),
}

/// Which relaxation family to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RelaxationKind {
    OuterApproximation,
    Piecewise,
}

/// Options shared by the model builders and the top-level solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelaxationOptions {
    pub kind: RelaxationKind,
    /// Maximum chord-vs-curve error (meters) of the flow partitions.
    pub xi: f64,
    /// Continuously relax flow-direction indicators.
    pub relax_directions: bool,
    pub duality_cuts: bool,
    pub direction_vis: bool,
    pub symmetry_cuts: bool,
    /// Tie the duality-cut work terms to the piecewise convex-combination
    /// variables when both are present.
    pub share_pw_duality: bool,
}

impl Default for RelaxationOptions {
    fn default() -> Self {
        RelaxationOptions {
            kind: RelaxationKind::OuterApproximation,
            xi: 1.0,
            relax_directions: false,
            duality_cuts: false,
            direction_vis: false,
            symmetry_cuts: false,
            share_pw_duality: false,
        }
    }
}

/// Temporal slice of the model being built.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemporalScope {
    /// All steps, with Euler coupling, tank recovery, and switching limits.
    Full,
    /// One decoupled steady state at step `k`.
    SingleStep(usize),
    /// One steady state covering every step at once: per-step parameters are
    /// relaxed to their range over the horizon, so derived facts hold at all
    /// steps.
    PooledStep,
}

impl TemporalScope {
    pub fn steps(&self, instance: &Instance) -> usize {
        match self {
            TemporalScope::Full => instance.horizon(),
            _ => 1,
        }
    }
}

// ---------------------------------------------------------------------------
// partitions

/// Per-(link, step, direction) sorted flow breakpoints with endpoints at the
/// current directed bounds.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Partition {
    pub xi: f64,
    entries: BTreeMap<(LinkIdx, usize, Dir), Vec<f64>>,
}

impl Partition {
    pub fn get(&self, link: LinkIdx, k: usize, dir: Dir) -> Option<&[f64]> {
        self.entries.get(&(link, k, dir)).map(|v| v.as_slice())
    }

    pub fn insert(&mut self, link: LinkIdx, k: usize, dir: Dir, points: Vec<f64>) {
        self.entries.insert((link, k, dir), points);
    }

    /// Builds partitions for every pipe (both directions) and pump (positive
    /// direction) over the directed flow bounds in `bounds`.
    pub fn build(instance: &Instance, bounds: &BoundsStore, xi: f64) -> Result<Partition, FormulationError> {
        Self::build_scoped(instance, bounds, xi, TemporalScope::Full)
    }

    pub fn build_scoped(
        instance: &Instance,
        bounds: &BoundsStore,
        xi: f64,
        scope: TemporalScope,
    ) -> Result<Partition, FormulationError> {
        Self::build_refining(instance, bounds, xi, scope, None)
    }

    /// Like [`Partition::build_scoped`], but inheriting every breakpoint of a
    /// previous partition that still falls inside the (tightened) directed
    /// interval. Relaxations built over the refined partition are then at
    /// least as tight as before, point for point.
    pub fn build_refining(
        instance: &Instance,
        bounds: &BoundsStore,
        xi: f64,
        scope: TemporalScope,
        base: Option<&Partition>,
    ) -> Result<Partition, FormulationError> {
        if !(xi > 0.0) {
            return Err(FormulationError::BadTolerance(xi));
        }
        let mut partition = Partition { xi, entries: BTreeMap::new() };
        let steps = scope.steps(instance);
        for (l, link) in instance.links.iter().enumerate() {
            for k in 0..steps {
                // keys must match what the builder looks up in this scope
                let key_k = match scope {
                    TemporalScope::SingleStep(step) => step,
                    _ => k,
                };
                match &link.kind {
                    LinkKind::Pipe(p) => {
                        for dir in Dir::BOTH {
                            let (lo, hi) = scoped_dir_bounds(bounds, scope, l, k, dir);
                            let length = p.length;
                            let resistance = p.resistance;
                            let exponent = p.exponent;
                            let seeds = base.and_then(|b| b.get(l, key_k, dir));
                            let points = build_partition_seeded(
                                |q| length * resistance * q.powf(exponent),
                                lo,
                                hi,
                                xi,
                                seeds,
                            )?;
                            partition.insert(l, key_k, dir, points);
                        }
                    }
                    LinkKind::Pump(p) => {
                        let (lo, hi) = scoped_dir_bounds(bounds, scope, l, k, Dir::Pos);
                        let (a, b, c) = (p.gain_a, p.gain_b, p.gain_c);
                        let seeds = base.and_then(|b| b.get(l, key_k, Dir::Pos));
                        let points =
                            build_partition_seeded(|q| a + b * q.powf(c), lo, hi, xi, seeds)?;
                        partition.insert(l, key_k, Dir::Pos, points);
                    }
                    LinkKind::Valve => {}
                }
            }
        }
        Ok(partition)
    }
}

fn scoped_dir_bounds(bounds: &BoundsStore, scope: TemporalScope, l: LinkIdx, k: usize, dir: Dir) -> (f64, f64) {
    match scope {
        TemporalScope::Full => bounds.dir(l, k, dir),
        TemporalScope::SingleStep(step) => bounds.dir(l, step, dir),
        TemporalScope::PooledStep => bounds.pooled_dir(l, dir),
    }
}

/// Splits `[lo, hi]` until the vertical gap between each chord and the curve
/// is at most ξ. Splitting always happens at the interval's maximum-gap
/// point, so partitions for smaller tolerances refine those for larger ones.
pub fn build_partition(
    curve: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    xi: f64,
) -> Result<Vec<f64>, FormulationError> {
    build_partition_seeded(curve, lo, hi, xi, None)
}

fn build_partition_seeded(
    curve: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    xi: f64,
    seeds: Option<&[f64]>,
) -> Result<Vec<f64>, FormulationError> {
    if !(xi > 0.0) {
        return Err(FormulationError::BadTolerance(xi));
    }
    if !(lo <= hi) {
        return Err(FormulationError::InconsistentBounds(format!("[{lo}, {hi}]")));
    }
    if hi - lo < 1e-12 {
        return Ok(vec![lo]);
    }
    let mut points = vec![lo, hi];
    if let Some(seeds) = seeds {
        points.extend(seeds.iter().copied().filter(|&q| q > lo + 1e-12 && q < hi - 1e-12));
    }
    points.sort_by(|x, y| x.partial_cmp(y).unwrap());
    points.dedup();
    let mut stack: Vec<(f64, f64)> = points.windows(2).map(|w| (w[0], w[1])).collect();
    while let Some((a, b)) = stack.pop() {
        let (q_star, gap) = max_chord_gap(&curve, a, b);
        if gap > xi && q_star > a + 1e-12 && q_star < b - 1e-12 {
            points.push(q_star);
            stack.push((a, q_star));
            stack.push((q_star, b));
        }
    }
    points.sort_by(|x, y| x.partial_cmp(y).unwrap());
    points.dedup();
    Ok(points)
}

/// Maximum vertical distance between the chord over `[a, b]` and the curve,
/// located by ternary search (the gap is unimodal for curves with monotone
/// derivative).
fn max_chord_gap(curve: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let fa = curve(a);
    let fb = curve(b);
    let slope = (fb - fa) / (b - a);
    let gap = |q: f64| ((fa + slope * (q - a)) - curve(q)).abs();
    let (mut lo, mut hi) = (a, b);
    for _ in 0..200 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if gap(m1) < gap(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    let q = 0.5 * (lo + hi);
    (q, gap(q))
}

// ---------------------------------------------------------------------------
// model builder

/// Incremental builder over one instance, bounds store, and temporal scope.
pub struct ModelBuilder<'a> {
    pub instance: &'a Instance,
    pub bounds: &'a BoundsStore,
    pub scope: TemporalScope,
    pub options: RelaxationOptions,
    model: MilpModel,
}

impl<'a> ModelBuilder<'a> {
    pub fn new(instance: &'a Instance, bounds: &'a BoundsStore, scope: TemporalScope, options: RelaxationOptions) -> Self {
        ModelBuilder { instance, bounds, scope, options, model: MilpModel::new() }
    }

    pub fn model(&self) -> &MilpModel {
        &self.model
    }

    pub fn into_model(self) -> MilpModel {
        self.model
    }

    fn steps(&self) -> usize {
        self.scope.steps(self.instance)
    }

    fn head_bounds(&self, node: NodeIdx, k: usize) -> (f64, f64) {
        match self.scope {
            TemporalScope::Full => self.bounds.head(node, k),
            TemporalScope::SingleStep(step) => self.bounds.head(node, step),
            TemporalScope::PooledStep => self.bounds.pooled_head(node),
        }
    }

    fn flow_bounds(&self, link: LinkIdx, k: usize) -> (f64, f64) {
        let (lb, ub) = match self.scope {
            TemporalScope::Full => self.bounds.flow(link, k),
            TemporalScope::SingleStep(step) => self.bounds.flow(link, step),
            TemporalScope::PooledStep => self.bounds.pooled_flow(link),
        };
        let (_, pos_ub) = self.dir_bounds(link, k, Dir::Pos);
        let (_, neg_ub) = self.dir_bounds(link, k, Dir::Neg);
        (lb.max(-neg_ub), ub.min(pos_ub))
    }

    fn dir_bounds(&self, link: LinkIdx, k: usize, dir: Dir) -> (f64, f64) {
        match self.scope {
            TemporalScope::Full => self.bounds.dir(link, k, dir),
            TemporalScope::SingleStep(step) => self.bounds.dir(link, step, dir),
            TemporalScope::PooledStep => self.bounds.pooled_dir(link, dir),
        }
    }

    fn direction_bounds(&self, link: LinkIdx, k: usize) -> (f64, f64) {
        match self.scope {
            TemporalScope::Full => self.bounds.direction(link, k),
            TemporalScope::SingleStep(step) => self.bounds.direction(link, step),
            TemporalScope::PooledStep => self.bounds.pooled_direction(link),
        }
    }

    fn status_bounds(&self, link: LinkIdx, k: usize) -> (f64, f64) {
        match self.scope {
            TemporalScope::Full => self.bounds.status(link, k),
            TemporalScope::SingleStep(step) => self.bounds.status(link, step),
            TemporalScope::PooledStep => self.bounds.pooled_status(link),
        }
    }

    fn demand_range(&self, node: NodeIdx, k: usize) -> (f64, f64) {
        let rate = match &self.instance.nodes[node].kind {
            NodeKind::Demand(d) => &d.rate,
            _ => unreachable!("demand_range on non-demand"),
        };
        match self.scope {
            TemporalScope::Full => (rate[k], rate[k]),
            TemporalScope::SingleStep(step) => (rate[step], rate[step]),
            TemporalScope::PooledStep => {
                let lo = rate.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = rate.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            }
        }
    }

    /// Head, flow, status, gain, volume, and switch variables plus every
    /// exact-linear constraint of the problem for this scope.
    pub fn add_shared_constraints(&mut self) -> Result<(), FormulationError> {
        let inst = self.instance;
        let steps = self.steps();
        let full = self.scope == TemporalScope::Full;

        // heads
        for (n, node) in inst.nodes.iter().enumerate() {
            let extra = if node.is_tank() && full { 1 } else { 0 };
            for k in 0..steps + extra {
                let (lb, ub) = self.head_bounds(n, k);
                if lb > ub {
                    return Err(FormulationError::InconsistentBounds(format!("head of {} at {k}", node.id)));
                }
                self.model.add_variable(VarKey::Head { node: n, k }, lb, ub, VarKind::Continuous)?;
            }
        }

        // flows and statuses
        for (l, link) in inst.links.iter().enumerate() {
            for k in 0..steps {
                let (lb, ub) = self.flow_bounds(l, k);
                if lb > ub {
                    return Err(FormulationError::InconsistentBounds(format!("flow of {} at {k}", link.id)));
                }
                self.model.add_variable(VarKey::Flow { link: l, k }, lb, ub, VarKind::Continuous)?;
            }
            if link.is_controllable() {
                for k in 0..steps {
                    let (zlb, zub) = self.status_bounds(l, k);
                    self.model.add_variable(VarKey::Status { link: l, k }, zlb, zub, VarKind::Binary)?;
                }
            }
            if link.is_pump() {
                let pump = link.as_pump().unwrap();
                for k in 0..steps {
                    let (qlb, _) = self.dir_bounds(l, k, Dir::Pos);
                    let gain_ub = (pump.gain_a + pump.gain_b * qlb.powf(pump.gain_c)).max(0.0);
                    self.model.add_variable(VarKey::Gain { link: l, k }, 0.0, gain_ub, VarKind::Continuous)?;
                }
            }
        }

        // tank volumes, flows, Euler coupling, recovery
        for t in inst.tank_indices() {
            let tank = inst.nodes[t].as_tank().unwrap();
            let area = tank.area();
            if full {
                for k in 0..=steps {
                    let (hlb, hub) = self.head_bounds(t, k);
                    let (vlb, vub) = if k == 0 {
                        (tank.initial_volume, tank.initial_volume)
                    } else {
                        (area * (hlb - tank.bottom), area * (hub - tank.bottom))
                    };
                    let v = self.model.add_variable(VarKey::Volume { node: t, k }, vlb, vub, VarKind::Continuous)?;
                    let h = self.model.var(VarKey::Head { node: t, k })?;
                    self.model.add_constraint(
                        format!("tank_volume[{t},{k}]"),
                        vec![(v, 1.0), (h, -area)],
                        Sense::Eq,
                        -area * tank.bottom,
                    )?;
                }
            }
            for k in 0..steps {
                let (flb, fub) = match self.scope {
                    TemporalScope::Full => (tank.flow_lb[k], tank.flow_ub[k]),
                    TemporalScope::SingleStep(step) => (tank.flow_lb[step], tank.flow_ub[step]),
                    TemporalScope::PooledStep => (
                        tank.flow_lb.iter().cloned().fold(f64::INFINITY, f64::min),
                        tank.flow_ub.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                    ),
                };
                let qt = self.model.add_variable(VarKey::TankFlow { node: t, k }, flb, fub, VarKind::Continuous)?;
                if full {
                    let v0 = self.model.var(VarKey::Volume { node: t, k })?;
                    let v1 = self.model.var(VarKey::Volume { node: t, k: k + 1 })?;
                    self.model.add_constraint(
                        format!("euler[{t},{k}]"),
                        vec![(v1, 1.0), (v0, -1.0), (qt, inst.dt[k])],
                        Sense::Eq,
                        0.0,
                    )?;
                }
            }
            if full {
                let v_final = self.model.var(VarKey::Volume { node: t, k: steps })?;
                self.model.add_constraint(
                    format!("recovery[{t}]"),
                    vec![(v_final, 1.0)],
                    Sense::Ge,
                    tank.initial_volume,
                )?;
            }
        }

        // conservation
        for (n, node) in inst.nodes.iter().enumerate() {
            for k in 0..steps {
                let mut terms: Vec<(VarId, f64)> = Vec::new();
                for (l, link) in inst.links.iter().enumerate() {
                    if link.tail == n {
                        terms.push((self.model.var(VarKey::Flow { link: l, k })?, 1.0));
                    }
                    if link.head == n {
                        terms.push((self.model.var(VarKey::Flow { link: l, k })?, -1.0));
                    }
                }
                match &node.kind {
                    NodeKind::Demand(_) => {
                        let (lo, hi) = self.demand_range(n, k);
                        if (hi - lo).abs() < 1e-15 {
                            self.model.add_constraint(format!("balance[{n},{k}]"), terms, Sense::Eq, lo)?;
                        } else {
                            self.model.add_constraint(format!("balance_lo[{n},{k}]"), terms.clone(), Sense::Ge, lo)?;
                            self.model.add_constraint(format!("balance_hi[{n},{k}]"), terms, Sense::Le, hi)?;
                        }
                    }
                    NodeKind::Reservoir => {
                        // reservoirs only ever supply
                        self.model.add_constraint(format!("supply[{n},{k}]"), terms, Sense::Ge, 0.0)?;
                    }
                    NodeKind::Tank(_) => {
                        let qt = self.model.var(VarKey::TankFlow { node: n, k })?;
                        terms.push((qt, -1.0));
                        self.model.add_constraint(format!("tank_balance[{n},{k}]"), terms, Sense::Eq, 0.0)?;
                    }
                }
            }
        }

        // valve disjunctions
        for (l, link) in inst.links.iter().enumerate() {
            if !link.is_valve() {
                continue;
            }
            for k in 0..steps {
                let q = self.model.var(VarKey::Flow { link: l, k })?;
                let z = self.model.var(VarKey::Status { link: l, k })?;
                let (qlb, qub) = self.flow_bounds(l, k);
                self.model.add_constraint(format!("valve_q_ub[{l},{k}]"), vec![(q, 1.0), (z, -qub)], Sense::Le, 0.0)?;
                self.model.add_constraint(format!("valve_q_lb[{l},{k}]"), vec![(q, 1.0), (z, -qlb)], Sense::Ge, 0.0)?;

                let hi = self.model.var(VarKey::Head { node: link.tail, k })?;
                let hj = self.model.var(VarKey::Head { node: link.head, k })?;
                let (hi_lb, hi_ub) = self.head_bounds(link.tail, k);
                let (hj_lb, hj_ub) = self.head_bounds(link.head, k);
                let up = hi_ub - hj_lb;
                let dn = hi_lb - hj_ub;
                self.model.add_constraint(
                    format!("valve_h_ub[{l},{k}]"),
                    vec![(hi, 1.0), (hj, -1.0), (z, up)],
                    Sense::Le,
                    up,
                )?;
                self.model.add_constraint(
                    format!("valve_h_lb[{l},{k}]"),
                    vec![(hi, 1.0), (hj, -1.0), (z, dn)],
                    Sense::Ge,
                    dn,
                )?;
            }
        }

        // pump disjunctions
        for (l, link) in inst.links.iter().enumerate() {
            if !link.is_pump() {
                continue;
            }
            for k in 0..steps {
                let q = self.model.var(VarKey::Flow { link: l, k })?;
                let z = self.model.var(VarKey::Status { link: l, k })?;
                let g = self.model.var(VarKey::Gain { link: l, k })?;
                let (min_active, _) = self.dir_bounds(l, k, Dir::Pos);
                let (_, qub) = self.flow_bounds(l, k);
                self.model.add_constraint(format!("pump_q_lb[{l},{k}]"), vec![(q, 1.0), (z, -min_active)], Sense::Ge, 0.0)?;
                self.model.add_constraint(format!("pump_q_ub[{l},{k}]"), vec![(q, 1.0), (z, -qub)], Sense::Le, 0.0)?;

                let hi = self.model.var(VarKey::Head { node: link.tail, k })?;
                let hj = self.model.var(VarKey::Head { node: link.head, k })?;
                let (hi_lb, hi_ub) = self.head_bounds(link.tail, k);
                let (hj_lb, hj_ub) = self.head_bounds(link.head, k);
                let up = hi_ub - hj_lb;
                let dn = hi_lb - hj_ub;
                self.model.add_constraint(
                    format!("pump_h_ub[{l},{k}]"),
                    vec![(hi, 1.0), (hj, -1.0), (g, 1.0), (z, up)],
                    Sense::Le,
                    up,
                )?;
                self.model.add_constraint(
                    format!("pump_h_lb[{l},{k}]"),
                    vec![(hi, 1.0), (hj, -1.0), (g, 1.0), (z, dn)],
                    Sense::Ge,
                    dn,
                )?;
            }
        }

        // switching limits and the cost objective are intertemporal
        if full {
            let stamps = inst.time_stamps();
            for l in inst.pump_indices() {
                let pump = inst.links[l].as_pump().unwrap();
                for k in 0..steps {
                    self.model.add_variable(VarKey::SwitchOn { link: l, k }, 0.0, 1.0, VarKind::Binary)?;
                    self.model.add_variable(VarKey::SwitchOff { link: l, k }, 0.0, 1.0, VarKind::Binary)?;
                }
                for k in 1..steps {
                    let zon = self.model.var(VarKey::SwitchOn { link: l, k })?;
                    let zoff = self.model.var(VarKey::SwitchOff { link: l, k })?;
                    let z1 = self.model.var(VarKey::Status { link: l, k })?;
                    let z0 = self.model.var(VarKey::Status { link: l, k: k - 1 })?;
                    self.model.add_constraint(
                        format!("switch_on_detect[{l},{k}]"),
                        vec![(z1, 1.0), (z0, -1.0), (zon, -1.0)],
                        Sense::Le,
                        0.0,
                    )?;
                    self.model.add_constraint(
                        format!("switch_off_detect[{l},{k}]"),
                        vec![(z0, 1.0), (z1, -1.0), (zoff, -1.0)],
                        Sense::Le,
                        0.0,
                    )?;
                }
                // a switch at t(k) pins the status of every step that starts
                // within the following τ window (the step beginning exactly
                // at t(k)+τ has already served the full minimum duration)
                for k in 0..steps {
                    let zon = self.model.var(VarKey::SwitchOn { link: l, k })?;
                    let zoff = self.model.var(VarKey::SwitchOff { link: l, k })?;
                    for kk in k..steps {
                        if stamps[kk] + 1e-9 < stamps[k] + pump.min_on_secs || kk == k {
                            let z = self.model.var(VarKey::Status { link: l, k: kk })?;
                            self.model.add_constraint(
                                format!("min_on[{l},{k},{kk}]"),
                                vec![(zon, 1.0), (z, -1.0)],
                                Sense::Le,
                                0.0,
                            )?;
                        }
                        if stamps[kk] + 1e-9 < stamps[k] + pump.min_off_secs || kk == k {
                            let z = self.model.var(VarKey::Status { link: l, k: kk })?;
                            self.model.add_constraint(
                                format!("min_off[{l},{k},{kk}]"),
                                vec![(z, 1.0), (zoff, 1.0)],
                                Sense::Le,
                                1.0,
                            )?;
                        }
                    }
                }
                if (pump.max_starts as usize) < steps {
                    let terms: Result<Vec<_>, _> = (0..steps)
                        .map(|k| self.model.var(VarKey::SwitchOn { link: l, k }).map(|v| (v, 1.0)))
                        .collect();
                    self.model.add_constraint(
                        format!("max_starts[{l}]"),
                        terms?,
                        Sense::Le,
                        pump.max_starts as f64,
                    )?;
                }
            }

            for l in inst.pump_indices() {
                let pump = inst.links[l].as_pump().unwrap();
                for k in 0..steps {
                    let q = self.model.var(VarKey::Flow { link: l, k })?;
                    let z = self.model.var(VarKey::Status { link: l, k })?;
                    self.model.add_objective_coefficient(q, pump.energy_cost[k]);
                    self.model.add_objective_coefficient(z, pump.activation_cost[k]);
                }
            }
        }
        Ok(())
    }

    /// Directed flows `q±`, direction indicators `y`, and directed head
    /// differences `Δh±` on pipes.
    pub fn add_direction_decomposition(&mut self) -> Result<(), FormulationError> {
        let inst = self.instance;
        let steps = self.steps();
        for (l, link) in inst.links.iter().enumerate() {
            for k in 0..steps {
                let (pos_lb, pos_ub) = self.dir_bounds(l, k, Dir::Pos);
                let (neg_lb, neg_ub) = self.dir_bounds(l, k, Dir::Neg);
                let qp = self.model.add_variable(VarKey::DirFlow { link: l, k, dir: Dir::Pos }, 0.0, pos_ub, VarKind::Continuous)?;
                let qm = self.model.add_variable(VarKey::DirFlow { link: l, k, dir: Dir::Neg }, 0.0, neg_ub, VarKind::Continuous)?;
                let (ylb, yub) = self.direction_bounds(l, k);
                let ykind = if self.options.relax_directions { VarKind::Continuous } else { VarKind::Binary };
                let y = self.model.add_variable(VarKey::Direction { link: l, k }, ylb, yub, ykind)?;

                let q = self.model.var(VarKey::Flow { link: l, k })?;
                self.model.add_constraint(
                    format!("flow_split[{l},{k}]"),
                    vec![(q, 1.0), (qp, -1.0), (qm, 1.0)],
                    Sense::Eq,
                    0.0,
                )?;

                // q̲⁺·y ≤ q⁺ ≤ q̄⁺·y. A pump's tightened positive lower bound
                // is conditional on the pump running, so it gates through the
                // status constraint instead of the direction.
                let y_gated_lb = if link.is_pump() { 0.0 } else { pos_lb };
                self.model.add_constraint(format!("dir_pos_ub[{l},{k}]"), vec![(qp, 1.0), (y, -pos_ub)], Sense::Le, 0.0)?;
                if y_gated_lb > 0.0 {
                    self.model.add_constraint(format!("dir_pos_lb[{l},{k}]"), vec![(qp, 1.0), (y, -y_gated_lb)], Sense::Ge, 0.0)?;
                }
                // q̲⁻·(1−y) ≤ q⁻ ≤ q̄⁻·(1−y)
                self.model.add_constraint(format!("dir_neg_ub[{l},{k}]"), vec![(qm, 1.0), (y, neg_ub)], Sense::Le, neg_ub)?;
                if neg_lb > 0.0 {
                    self.model.add_constraint(format!("dir_neg_lb[{l},{k}]"), vec![(qm, 1.0), (y, neg_lb)], Sense::Ge, neg_lb)?;
                }

                if link.is_pipe() {
                    let (hi_lb, hi_ub) = self.head_bounds(link.tail, k);
                    let (hj_lb, hj_ub) = self.head_bounds(link.head, k);
                    let m_pos = (hi_ub - hj_lb).max(0.0);
                    let m_neg = (hj_ub - hi_lb).max(0.0);
                    let dhp = self.model.add_variable(VarKey::DeltaHead { link: l, k, dir: Dir::Pos }, 0.0, m_pos, VarKind::Continuous)?;
                    let dhm = self.model.add_variable(VarKey::DeltaHead { link: l, k, dir: Dir::Neg }, 0.0, m_neg, VarKind::Continuous)?;
                    let hi = self.model.var(VarKey::Head { node: link.tail, k })?;
                    let hj = self.model.var(VarKey::Head { node: link.head, k })?;
                    self.model.add_constraint(
                        format!("head_split[{l},{k}]"),
                        vec![(dhp, 1.0), (dhm, -1.0), (hi, -1.0), (hj, 1.0)],
                        Sense::Eq,
                        0.0,
                    )?;
                    self.model.add_constraint(format!("dh_pos_gate[{l},{k}]"), vec![(dhp, 1.0), (y, -m_pos)], Sense::Le, 0.0)?;
                    self.model.add_constraint(format!("dh_neg_gate[{l},{k}]"), vec![(dhm, 1.0), (y, m_neg)], Sense::Le, m_neg)?;
                }
            }
        }
        Ok(())
    }

    /// Tangent outer approximations plus secant bounds for every pipe loss
    /// and pump gain curve.
    pub fn add_outer_approximation(&mut self, partition: &Partition) -> Result<(), FormulationError> {
        let inst = self.instance;
        let steps = self.steps();
        for (l, link) in inst.links.iter().enumerate() {
            match &link.kind {
                LinkKind::Pipe(p) => {
                    for k in 0..steps {
                        for dir in Dir::BOTH {
                            let pk = match self.scope {
                                TemporalScope::SingleStep(step) => (l, step, dir),
                                _ => (l, k, dir),
                            };
                            let points = partition
                                .get(pk.0, pk.1, pk.2)
                                .ok_or(FormulationError::MissingPartition { link: l, k, dir })?;
                            self.pipe_oa_cuts(l, k, dir, p.length, p.resistance, p.exponent, points)?;
                        }
                    }
                }
                LinkKind::Pump(p) => {
                    for k in 0..steps {
                        let pk = match self.scope {
                            TemporalScope::SingleStep(step) => (l, step),
                            _ => (l, k),
                        };
                        let points = partition
                            .get(pk.0, pk.1, Dir::Pos)
                            .ok_or(FormulationError::MissingPartition { link: l, k, dir: Dir::Pos })?;
                        self.pump_oa_cuts(l, k, p.gain_a, p.gain_b, p.gain_c, points)?;
                    }
                }
                LinkKind::Valve => {}
            }
        }
        Ok(())
    }

    /// Adds `coef·y_dir` to a row: for the negative direction `y⁻ = 1 − y`,
    /// so the coefficient lands on `y` negated and shifts the rhs.
    fn dir_indicator(terms: &mut Vec<(VarId, f64)>, rhs: &mut f64, y: VarId, dir: Dir, coef: f64) {
        match dir {
            Dir::Pos => terms.push((y, coef)),
            Dir::Neg => {
                terms.push((y, -coef));
                *rhs -= coef;
            }
        }
    }

    fn pipe_oa_cuts(
        &mut self,
        l: LinkIdx,
        k: usize,
        dir: Dir,
        length: f64,
        r: f64,
        alpha: f64,
        points: &[f64],
    ) -> Result<(), FormulationError> {
        let qd = self.model.var(VarKey::DirFlow { link: l, k, dir })?;
        let dh = self.model.var(VarKey::DeltaHead { link: l, k, dir })?;
        let y = self.model.var(VarKey::Direction { link: l, k })?;

        // tangents: r[q̂^α·y± + α·q̂^(α−1)·(q± − q̂·y±)] ≤ Δh±/L
        for &qh in points {
            let mut terms = vec![(qd, r * alpha * qh.powf(alpha - 1.0)), (dh, -1.0 / length)];
            let mut rhs = 0.0;
            let ycoef = r * qh.powf(alpha) * (1.0 - alpha);
            Self::dir_indicator(&mut terms, &mut rhs, y, dir, ycoef);
            self.model.add_constraint(format!("loss_oa[{l},{k},{dir:?},{qh:.6}]"), terms, Sense::Le, rhs)?;
        }

        // secant upper bound over the directed interval
        let (lo, hi) = (points[0], *points.last().unwrap());
        let mut terms = vec![(dh, -1.0 / length)];
        let mut rhs = 0.0;
        if hi - lo > 1e-12 {
            let slope = r * (lo.powf(alpha) - hi.powf(alpha)) / (lo - hi);
            terms.push((qd, slope));
            Self::dir_indicator(&mut terms, &mut rhs, y, dir, r * lo.powf(alpha) - slope * lo);
        } else {
            Self::dir_indicator(&mut terms, &mut rhs, y, dir, r * lo.powf(alpha));
        }
        self.model.add_constraint(format!("loss_secant[{l},{k},{dir:?}]"), terms, Sense::Ge, rhs)?;
        Ok(())
    }

    fn pump_oa_cuts(
        &mut self,
        l: LinkIdx,
        k: usize,
        a: f64,
        b: f64,
        c: f64,
        points: &[f64],
    ) -> Result<(), FormulationError> {
        let qp = self.model.var(VarKey::DirFlow { link: l, k, dir: Dir::Pos })?;
        let g = self.model.var(VarKey::Gain { link: l, k })?;
        let z = self.model.var(VarKey::Status { link: l, k })?;

        // tangents: g ≤ [a + b·q̂^c]·z + b·c·q̂^(c−1)·(q⁺ − q̂·z)
        for &qh in points {
            if qh == 0.0 && c < 1.0 {
                continue;
            }
            let slope = b * c * qh.powf(c - 1.0);
            let zcoef = a + b * qh.powf(c) - slope * qh;
            self.model.add_constraint(
                format!("gain_oa[{l},{k},{qh:.6}]"),
                vec![(g, 1.0), (z, -zcoef), (qp, -slope)],
                Sense::Le,
                0.0,
            )?;
        }

        // secant lower bound
        let (lo, hi) = (points[0], *points.last().unwrap());
        if hi - lo > 1e-12 {
            let slope = b * (lo.powf(c) - hi.powf(c)) / (lo - hi);
            let zcoef = a + b * lo.powf(c) - slope * lo;
            self.model.add_constraint(
                format!("gain_secant[{l},{k}]"),
                vec![(g, 1.0), (z, -zcoef), (qp, -slope)],
                Sense::Ge,
                0.0,
            )?;
        } else {
            self.model.add_constraint(
                format!("gain_secant[{l},{k}]"),
                vec![(g, 1.0), (z, -(a + b * lo.powf(c)))],
                Sense::Ge,
                0.0,
            )?;
        }
        Ok(())
    }

    /// Piecewise convex-combination envelopes for pipes and pumps.
    pub fn add_piecewise(&mut self, partition: &Partition) -> Result<(), FormulationError> {
        let inst = self.instance;
        let steps = self.steps();
        for (l, link) in inst.links.iter().enumerate() {
            match &link.kind {
                LinkKind::Pipe(p) => {
                    for k in 0..steps {
                        for dir in Dir::BOTH {
                            let pk = match self.scope {
                                TemporalScope::SingleStep(step) => (l, step, dir),
                                _ => (l, k, dir),
                            };
                            let points = partition
                                .get(pk.0, pk.1, pk.2)
                                .ok_or(FormulationError::MissingPartition { link: l, k, dir })?
                                .to_vec();
                            let r = p.resistance;
                            let alpha = p.exponent;
                            let length = p.length;
                            let activator = self.model.var(VarKey::Direction { link: l, k })?;
                            let dh = self.model.var(VarKey::DeltaHead { link: l, k, dir })?;
                            // Σ r·q̂^α·λ ≥ Δh±/L
                            let weights: Vec<f64> = points.iter().map(|&q| r * q.powf(alpha)).collect();
                            self.convex_combination(l, k, dir, &points, &weights, (dh, -1.0 / length), Sense::Ge, activator)?;
                        }
                    }
                }
                LinkKind::Pump(p) => {
                    for k in 0..steps {
                        let pk = match self.scope {
                            TemporalScope::SingleStep(step) => (l, step),
                            _ => (l, k),
                        };
                        let points = partition
                            .get(pk.0, pk.1, Dir::Pos)
                            .ok_or(FormulationError::MissingPartition { link: l, k, dir: Dir::Pos })?
                            .to_vec();
                        let activator = self.model.var(VarKey::Status { link: l, k })?;
                        let g = self.model.var(VarKey::Gain { link: l, k })?;
                        // g ≥ Σ (a + b·q̂^c)·λ
                        let weights: Vec<f64> =
                            points.iter().map(|&q| p.gain_a + p.gain_b * q.powf(p.gain_c)).collect();
                        self.convex_combination(l, k, Dir::Pos, &points, &weights, (g, -1.0), Sense::Le, activator)?;
                    }
                }
                LinkKind::Valve => {}
            }
        }
        Ok(())
    }

    /// Shared convex-combination scaffolding:
    ///   Σ w_p·λ_p  sense  target,  q_dir = Σ q̂_p·λ_p,  Σλ = act,  Σx = act,
    /// plus adjacency restrictions on λ.
    #[allow(clippy::too_many_arguments)]
    fn convex_combination(
        &mut self,
        l: LinkIdx,
        k: usize,
        dir: Dir,
        points: &[f64],
        weights: &[f64],
        target: (VarId, f64),
        sense: Sense,
        activator: VarId,
    ) -> Result<(), FormulationError> {
        let np = points.len();
        let mut lambda = Vec::with_capacity(np);
        for p in 0..np {
            lambda.push(self.model.add_variable(
                VarKey::ConvexWeight { link: l, k, dir, p },
                0.0,
                1.0,
                VarKind::Continuous,
            )?);
        }
        // envelope row: Σ w_p λ_p + target ≥/≤ 0
        let mut terms: Vec<(VarId, f64)> = lambda.iter().zip(weights).map(|(&v, &w)| (v, w)).collect();
        terms.push(target);
        self.model.add_constraint(format!("pw_envelope[{l},{k},{dir:?}]"), terms, sense, 0.0)?;

        // q_dir tie
        let qd = self.model.var(VarKey::DirFlow { link: l, k, dir })?;
        let mut terms: Vec<(VarId, f64)> = lambda.iter().zip(points).map(|(&v, &q)| (v, q)).collect();
        terms.push((qd, -1.0));
        self.model.add_constraint(format!("pw_flow[{l},{k},{dir:?}]"), terms, Sense::Eq, 0.0)?;

        // Σλ = y± for pipes (the direction indicator of this envelope's
        // sense), Σλ = z for pumps
        let mut terms: Vec<(VarId, f64)> = lambda.iter().map(|&v| (v, 1.0)).collect();
        let mut rhs = 0.0;
        let is_direction = self.model.key_of(activator) == (VarKey::Direction { link: l, k });
        if is_direction {
            Self::dir_indicator(&mut terms, &mut rhs, activator, dir, -1.0);
        } else {
            terms.push((activator, -1.0));
        }
        self.model.add_constraint(format!("pw_lambda_sum[{l},{k},{dir:?}]"), terms, Sense::Eq, rhs)?;

        if np >= 2 {
            let mut xs = Vec::with_capacity(np - 1);
            for p in 1..np {
                xs.push(self.model.add_variable(
                    VarKey::IntervalActive { link: l, k, dir, p },
                    0.0,
                    1.0,
                    VarKind::Binary,
                )?);
            }
            let mut terms: Vec<(VarId, f64)> = xs.iter().map(|&v| (v, 1.0)).collect();
            let mut rhs = 0.0;
            if is_direction {
                Self::dir_indicator(&mut terms, &mut rhs, activator, dir, -1.0);
            } else {
                terms.push((activator, -1.0));
            }
            self.model.add_constraint(format!("pw_x_sum[{l},{k},{dir:?}]"), terms, Sense::Eq, rhs)?;

            // adjacency: λ_1 ≤ x_1, λ_p ≤ x_{p−1} + x_p, λ_{np} ≤ x_{np−1}
            for p in 0..np {
                let mut terms = vec![(lambda[p], 1.0)];
                if p > 0 {
                    terms.push((xs[p - 1], -1.0));
                }
                if p < np - 1 {
                    terms.push((xs[p], -1.0));
                }
                self.model.add_constraint(format!("pw_adjacency[{l},{k},{dir:?},{p}]"), terms, Sense::Le, 0.0)?;
            }
        }
        Ok(())
    }

    /// Assigns decreasing branch priorities along the time axis, with
    /// component statuses ahead of direction indicators at the same step.
    pub fn set_branch_priorities(&mut self) {
        let steps = self.steps();
        let horizon = steps as i64;
        for v in &mut self.model.variables {
            v.branch_priority = match v.key {
                VarKey::Status { k, .. } => 2 * (horizon - k as i64),
                VarKey::Direction { k, .. } => 2 * (horizon - k as i64) - 1,
                _ => 0,
            };
        }
    }
}

/// Builds the plain shared-constraint fragment (no directed variables).
pub fn build_shared_constraints(
    instance: &Instance,
    bounds: &BoundsStore,
) -> Result<MilpModel, FormulationError> {
    let mut b = ModelBuilder::new(instance, bounds, TemporalScope::Full, RelaxationOptions::default());
    b.add_shared_constraints()?;
    Ok(b.into_model())
}

/// Shared constraints plus the flow-direction decomposition.
pub fn build_direction_decomposition(
    instance: &Instance,
    bounds: &BoundsStore,
) -> Result<MilpModel, FormulationError> {
    let mut b = ModelBuilder::new(instance, bounds, TemporalScope::Full, RelaxationOptions::default());
    b.add_shared_constraints()?;
    b.add_direction_decomposition()?;
    Ok(b.into_model())
}

/// Full outer-approximation relaxation.
pub fn build_oa(
    instance: &Instance,
    bounds: &BoundsStore,
    partition: &Partition,
    options: &RelaxationOptions,
) -> Result<MilpModel, FormulationError> {
    let mut b = ModelBuilder::new(instance, bounds, TemporalScope::Full, options.clone());
    b.add_shared_constraints()?;
    b.add_direction_decomposition()?;
    b.add_outer_approximation(partition)?;
    b.set_branch_priorities();
    Ok(b.into_model())
}

/// Full piecewise relaxation; includes the outer approximation.
pub fn build_pw(
    instance: &Instance,
    bounds: &BoundsStore,
    partition: &Partition,
    options: &RelaxationOptions,
) -> Result<MilpModel, FormulationError> {
    let mut b = ModelBuilder::new(instance, bounds, TemporalScope::Full, options.clone());
    b.add_shared_constraints()?;
    b.add_direction_decomposition()?;
    b.add_outer_approximation(partition)?;
    b.add_piecewise(partition)?;
    b.set_branch_priorities();
    Ok(b.into_model())
}

// ---------------------------------------------------------------------------
// lifting simulated schedules into model space

/// Maps a simulator-certified trajectory onto every registered variable of a
/// relaxation model. The result satisfies the model's constraints whenever
/// the relaxation is sound for the instance.
pub fn lift_assignment(
    instance: &Instance,
    model: &MilpModel,
    bounds: &BoundsStore,
    partition: &Partition,
    schedule: &Schedule,
    sim: &SimulationResult,
) -> Result<Vec<f64>, FormulationError> {
    if !sim.feasible {
        return Err(FormulationError::Lift("cannot lift an infeasible trajectory".into()));
    }
    // Interchangeable parallel pumps are permuted into the canonical
    // (lexicographically nondecreasing) activation order; running members of
    // a group carry identical flows, so the permuted point is physically the
    // same trajectory.
    let (schedule, sim) = canonicalize_groups(instance, schedule, sim);
    let (schedule, sim) = (&schedule, &sim);
    let tanks = instance.tank_indices();
    let mut x = vec![0.0; model.num_variables()];

    let directions = lifted_directions(instance, bounds, sim);

    for (&key, &id) in model.registry() {
        x[id] = match key {
            VarKey::Head { node, k } => {
                if instance.nodes[node].is_tank() {
                    let ti = tanks.iter().position(|&t| t == node).unwrap();
                    let tank = instance.nodes[node].as_tank().unwrap();
                    crate::network::tank_head(tank, sim.tank_volumes[ti][k]).map_err(|e| FormulationError::Lift(e.to_string()))?
                } else {
                    sim.steps[k].heads[node]
                }
            }
            VarKey::Flow { link, k } => sim.steps[k].flows[link],
            VarKey::DirFlow { link, k, dir } => {
                let q = sim.steps[k].flows[link];
                match dir {
                    Dir::Pos => q.max(0.0),
                    Dir::Neg => (-q).max(0.0),
                }
            }
            VarKey::Direction { link, k } => {
                if directions[k][link] {
                    1.0
                } else {
                    0.0
                }
            }
            VarKey::Status { link, k } => {
                if schedule.steps[k].status(link).unwrap_or(false) {
                    1.0
                } else {
                    0.0
                }
            }
            VarKey::Gain { link, k } => {
                if schedule.steps[k].status(link) == Some(true) {
                    let l = &instance.links[link];
                    (sim.steps[k].heads[l.head] - sim.steps[k].heads[l.tail]).max(0.0)
                } else {
                    0.0
                }
            }
            VarKey::DeltaHead { link, k, dir } => {
                let l = &instance.links[link];
                let dh = sim.steps[k].heads[l.tail] - sim.steps[k].heads[l.head];
                match dir {
                    Dir::Pos => dh.max(0.0),
                    Dir::Neg => (-dh).max(0.0),
                }
            }
            VarKey::Volume { node, k } => {
                let ti = tanks.iter().position(|&t| t == node).unwrap();
                sim.tank_volumes[ti][k]
            }
            VarKey::TankFlow { node, k } => sim.steps[k].net_outflow(instance, node),
            VarKey::SwitchOn { link, k } => {
                if k > 0 {
                    let on = schedule.steps[k].status(link) == Some(true);
                    let was = schedule.steps[k - 1].status(link) == Some(true);
                    if on && !was {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    0.0
                }
            }
            VarKey::SwitchOff { link, k } => {
                if k > 0 {
                    let on = schedule.steps[k].status(link) == Some(true);
                    let was = schedule.steps[k - 1].status(link) == Some(true);
                    if !on && was {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    0.0
                }
            }
            VarKey::TankProduct { node, k } => {
                let ti = tanks.iter().position(|&t| t == node).unwrap();
                let tank = instance.nodes[node].as_tank().unwrap();
                let head = crate::network::tank_head(tank, sim.tank_volumes[ti][k]).map_err(|e| FormulationError::Lift(e.to_string()))?;
                sim.steps[k].net_outflow(instance, node) * head
            }
            VarKey::PipeWorkEpi { link, k, dir } => {
                let p = instance.links[link].as_pipe().unwrap();
                let q = sim.steps[k].flows[link];
                let qd = match dir {
                    Dir::Pos => q.max(0.0),
                    Dir::Neg => (-q).max(0.0),
                };
                p.length * p.resistance * qd.powf(1.0 + p.exponent)
            }
            VarKey::PumpWorkEpi { link, k } => {
                let p = instance.links[link].as_pump().unwrap();
                let q = sim.steps[k].flows[link].max(0.0);
                -(p.gain_a * q + p.gain_b * q.powf(p.gain_c + 1.0))
            }
            // convex-combination variables are filled afterwards
            VarKey::ConvexWeight { .. } | VarKey::IntervalActive { .. } => 0.0,
        };
    }

    // bracket directed flows into their partitions
    for (&key, &id) in model.registry() {
        if let VarKey::ConvexWeight { link, k, dir, p } = key {
            let points = partition
                .get(link, k, dir)
                .ok_or(FormulationError::MissingPartition { link, k, dir })?;
            let active = match &instance.links[link].kind {
                LinkKind::Pump(_) => schedule.steps[k].status(link) == Some(true),
                _ => match dir {
                    Dir::Pos => directions[k][link],
                    Dir::Neg => !directions[k][link],
                },
            };
            if !active {
                continue;
            }
            let q = sim.steps[k].flows[link];
            let qd = match dir {
                Dir::Pos => q.max(0.0),
                Dir::Neg => (-q).max(0.0),
            };
            let (w, p_lo) = bracket(points, qd);
            if p == p_lo {
                x[id] = 1.0 - w;
                // mark the bracketing interval active
                if let Some(xid) = model.lookup(VarKey::IntervalActive { link, k, dir, p: p_lo + 1 }) {
                    x[xid] = 1.0;
                }
            } else if p == p_lo + 1 {
                x[id] = w;
            }
        }
    }
    Ok(x)
}

/// Reassigns the on-statuses within each group of identical parallel pumps
/// to the group's trailing members, moving the (shared) on-flow with them.
fn canonicalize_groups(
    instance: &Instance,
    schedule: &Schedule,
    sim: &SimulationResult,
) -> (Schedule, SimulationResult) {
    let groups = instance.pump_groups();
    if groups.is_empty() {
        return (schedule.clone(), sim.clone());
    }
    let mut schedule = schedule.clone();
    let mut sim = sim.clone();
    for k in 0..sim.steps.len() {
        let mut status: BTreeMap<LinkIdx, bool> =
            schedule.steps[k].entries().collect();
        for group in &groups {
            let on: Vec<LinkIdx> =
                group.iter().copied().filter(|&l| status.get(&l) == Some(&true)).collect();
            if on.is_empty() {
                continue;
            }
            let on_flow = sim.steps[k].flows[on[0]];
            let n = group.len();
            for (pos, &l) in group.iter().enumerate() {
                let canonical_on = pos >= n - on.len();
                status.insert(l, canonical_on);
                sim.steps[k].flows[l] = if canonical_on { on_flow } else { 0.0 };
            }
        }
        schedule.steps[k] = crate::hydraulics::ControlState::new(instance, status)
            .expect("canonical state covers all controls");
    }
    (schedule, sim)
}

/// Interpolation weight and lower breakpoint index for `q` within `points`.
fn bracket(points: &[f64], q: f64) -> (f64, usize) {
    if points.len() == 1 {
        return (0.0, 0);
    }
    let q = q.clamp(points[0], *points.last().unwrap());
    let mut p = 0;
    while p + 2 < points.len() && q > points[p + 1] {
        p += 1;
    }
    let (a, b) = (points[p], points[p + 1]);
    let w = if b - a > 1e-15 { (q - a) / (b - a) } else { 0.0 };
    (w, p)
}

/// Chooses direction indicators for a simulated trajectory: the flow sign
/// where it is decisive, and a consistent completion on zero-flow links so
/// that direction-based valid inequalities hold.
pub fn lifted_directions(
    instance: &Instance,
    bounds: &BoundsStore,
    sim: &SimulationResult,
) -> Vec<Vec<bool>> {
    let tol = 1e-9;
    let horizon = sim.steps.len();
    let mut all = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let flows = &sim.steps[k].flows;
        let allows = |l: LinkIdx, value: bool| -> bool {
            // the indicator may have been fixed outright
            let (ylb, yub) = bounds.direction(l, k);
            if value && yub < 0.5 {
                return false;
            }
            if !value && ylb > 0.5 {
                return false;
            }
            // a zero-flow link admits y=1 only if its positive directed lower
            // bound is zero (and symmetrically for y=0)
            if instance.links[l].is_pump() {
                return true;
            }
            if value {
                bounds.dir(l, k, Dir::Pos).0 <= tol
            } else {
                bounds.dir(l, k, Dir::Neg).0 <= tol
            }
        };
        let mut y: Vec<bool> = (0..instance.links.len())
            .map(|l| {
                if flows[l] > tol {
                    true
                } else if flows[l] < -tol {
                    false
                } else if allows(l, true) {
                    true
                } else {
                    false
                }
            })
            .collect();

        // pass-through junctions of degree two carry equality constraints on
        // their incident directions; repair zero-flow links to satisfy them
        for _ in 0..instance.links.len() + 1 {
            let mut changed = false;
            for (n, node) in instance.nodes.iter().enumerate() {
                let rate = match &node.kind {
                    NodeKind::Demand(d) => d.rate[k],
                    _ => continue,
                };
                if rate != 0.0 {
                    continue;
                }
                let (out, inc) = instance.incidence(n);
                let zero = |l: LinkIdx| flows[l].abs() <= tol;
                if out.len() == 1 && inc.len() == 1 {
                    let (li, lo) = (inc[0], out[0]);
                    if zero(li) && zero(lo) && y[li] != y[lo] {
                        // prefer forward orientation when both links admit it
                        let target = allows(li, true) && allows(lo, true);
                        y[li] = target;
                        y[lo] = target;
                        changed = true;
                    }
                } else if out.len() + inc.len() == 2 && (out.is_empty() || inc.is_empty()) {
                    let pair: Vec<LinkIdx> = out.iter().chain(inc.iter()).copied().collect();
                    let (a, b) = (pair[0], pair[1]);
                    if zero(a) && zero(b) {
                        let sum = y[a] as usize + y[b] as usize;
                        if sum != 1 {
                            if allows(a, true) && allows(b, false) {
                                y[a] = true;
                                y[b] = false;
                            } else {
                                y[a] = false;
                                y[b] = true;
                            }
                            changed = true;
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }

        // every source must point at least one incident link away from itself
        for (n, node) in instance.nodes.iter().enumerate() {
            let is_source = node.is_reservoir()
                || matches!(&node.kind, NodeKind::Demand(d) if d.rate[k] > 0.0);
            if !is_source {
                continue;
            }
            let (out, inc) = instance.incidence(n);
            let satisfied = out.iter().any(|&l| y[l]) || inc.iter().any(|&l| !y[l]);
            if !satisfied {
                if let Some(&l) = out.iter().find(|&&l| flows[l].abs() <= tol && allows(l, true)) {
                    y[l] = true;
                } else if let Some(&l) = inc.iter().find(|&&l| flows[l].abs() <= tol && allows(l, false)) {
                    y[l] = false;
                }
            }
        }
        all.push(y);
    }
    all
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::preprocess::BoundsStore;

    #[test]
    fn partition_degenerate_and_linear_cases() {
        assert_eq!(build_partition(|q| q * q, 0.0, 0.0, 0.1).unwrap(), vec![0.0]);
        let linear = build_partition(|q| 3.0 * q, -1.0, 2.0, 1e-9).unwrap();
        assert_eq!(linear, vec![-1.0, 2.0]);
        assert!(build_partition(|q| q, 0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn partition_meets_tolerance_by_dense_sampling() {
        let f = |q: f64| q.powf(1.852);
        for &xi in &[0.05, 0.2] {
            let points = build_partition(f, 0.0, 1.0, xi).unwrap();
            assert!(points.len() >= 3, "xi={xi}: {points:?}");
            for w in points.windows(2) {
                let (a, b) = (w[0], w[1]);
                let (fa, fb) = (f(a), f(b));
                let slope = (fb - fa) / (b - a);
                for i in 0..=1000 {
                    let q = a + (b - a) * i as f64 / 1000.0;
                    let gap = (fa + slope * (q - a)) - f(q);
                    assert!(gap.abs() <= xi + 1e-9, "xi={xi} q={q} gap={gap}");
                }
            }
        }
    }

    #[test]
    fn partition_refinement_is_nested() {
        let f = |q: f64| q.powf(2.852);
        let coarse = build_partition(f, 0.0, 2.0, 0.5).unwrap();
        let fine = build_partition(f, 0.0, 2.0, 0.05).unwrap();
        for p in &coarse {
            assert!(fine.iter().any(|q| (q - p).abs() < 1e-12), "{p} missing from finer partition");
        }
    }

    #[test]
    fn shared_model_counts_and_switching_window() {
        let inst = fixtures::switching_instance(4);
        let bounds = BoundsStore::naive(&inst);
        let model = build_shared_constraints(&inst, &bounds).unwrap();
        // min-on windows: switching on at step k pins the status for two steps
        let pump = inst.pump_indices()[0];
        let labels: Vec<&str> = model.constraints.iter().map(|c| c.label.as_str()).collect();
        assert!(labels.contains(&format!("min_on[{pump},1,1]").as_str()));
        assert!(labels.contains(&format!("min_on[{pump},1,2]").as_str()));
        assert!(!labels.contains(&format!("min_on[{pump},1,3]").as_str()));
        assert!(labels.contains(&format!("max_starts[{pump}]").as_str()));
    }

    #[test]
    fn pump_direction_keeps_negative_flow_at_zero() {
        let inst = fixtures::pump_tank_instance(2);
        let bounds = BoundsStore::naive(&inst);
        let model = build_direction_decomposition(&inst, &bounds).unwrap();
        let pump = inst.pump_indices()[0];
        let qm = model.var(VarKey::DirFlow { link: pump, k: 0, dir: Dir::Neg }).unwrap();
        assert_eq!(model.variables[qm].ub, 0.0);
    }

    #[test]
    fn direction_relaxation_marks_y_continuous() {
        let inst = fixtures::pump_tank_instance(2);
        let bounds = BoundsStore::naive(&inst);
        let mut options = RelaxationOptions::default();
        options.relax_directions = true;
        let partition = Partition::build(&inst, &bounds, 1.0).unwrap();
        let model = build_oa(&inst, &bounds, &partition, &options).unwrap();
        for v in &model.variables {
            if let VarKey::Direction { .. } = v.key {
                assert_eq!(v.kind, VarKind::Continuous);
            }
        }
    }

    #[test]
    fn directed_bounds_follow_signed_bounds() {
        let mut b = fixtures::InstanceBuilder::new(vec![60.0]);
        let r = b.reservoir("r", 10.0);
        let d = b.demand("d", vec![0.0], 0.0, 20.0);
        let l = b.pipe("p", r, d, 10.0, 0.01, 2.0);
        let mut inst = b.build();
        inst.links[l].flow_lb = vec![-1.0];
        inst.links[l].flow_ub = vec![2.0];
        let bounds = BoundsStore::naive(&inst);
        assert_eq!(bounds.dir(l, 0, Dir::Pos).1, 2.0);
        assert_eq!(bounds.dir(l, 0, Dir::Neg).1, 1.0);
    }

    #[test]
    fn pump_oa_cut_at_unit_breakpoint_matches_hand_expansion() {
        // a=100, b=−50, c=2 at q̂=1: g ≤ 50·z − 100·(q⁺ − z), i.e.
        // g + 100·q⁺ − 150·z ≤ 0
        let mut bld = fixtures::InstanceBuilder::new(vec![60.0]);
        let r = bld.reservoir("r", 10.0);
        let d = bld.demand("d", vec![-0.5], 0.0, 200.0);
        bld.pump("pm", r, d, (100.0, -50.0, 2.0), 2.0, 0.0, vec![1.0], vec![0.0]);
        let inst = bld.build();
        let bounds = BoundsStore::naive(&inst);
        let mut partition = Partition { xi: 1.0, entries: BTreeMap::new() };
        partition.insert(0, 0, Dir::Pos, vec![0.0, 1.0, 2.0]);
        let model = build_oa(&inst, &bounds, &partition, &RelaxationOptions::default()).unwrap();
        let g = model.var(VarKey::Gain { link: 0, k: 0 }).unwrap();
        let qp = model.var(VarKey::DirFlow { link: 0, k: 0, dir: Dir::Pos }).unwrap();
        let z = model.var(VarKey::Status { link: 0, k: 0 }).unwrap();
        let found = model.constraints.iter().any(|c| {
            if c.sense != Sense::Le || c.rhs != 0.0 {
                return false;
            }
            let mut coef = BTreeMap::new();
            for &(id, v) in &c.terms {
                coef.insert(id, v);
            }
            coef.get(&g) == Some(&1.0)
                && coef.get(&qp).is_some_and(|&v| (v - 100.0).abs() < 1e-9)
                && coef.get(&z).is_some_and(|&v| (v + 150.0).abs() < 1e-9)
        });
        assert!(found, "expected hand-expanded tangent row");
    }

    #[test]
    fn zero_breakpoint_tangent_degenerates_to_nonnegativity() {
        let inst = fixtures::single_pipe_instance();
        let bounds = BoundsStore::naive(&inst);
        let mut partition = Partition { xi: 1.0, entries: BTreeMap::new() };
        partition.insert(0, 0, Dir::Pos, vec![0.0, 1.0]);
        partition.insert(0, 0, Dir::Neg, vec![0.0, 1.0]);
        let model = build_oa(&inst, &bounds, &partition, &RelaxationOptions::default()).unwrap();
        let dh = model.var(VarKey::DeltaHead { link: 0, k: 0, dir: Dir::Pos }).unwrap();
        // every other coefficient of the q̂=0 tangent vanishes, leaving Δh⁺ ≥ 0
        let found = model.constraints.iter().any(|c| {
            c.sense == Sense::Le
                && c.rhs == 0.0
                && c.terms.len() == 1
                && c.terms[0].0 == dh
                && c.terms[0].1 < 0.0
        });
        assert!(found);
    }

    #[test]
    fn branch_priorities_put_statuses_before_directions_and_decay_in_time() {
        let inst = fixtures::pump_tank_instance(2);
        let bounds = BoundsStore::naive(&inst);
        let partition = Partition::build(&inst, &bounds, 1.0).unwrap();
        let model = build_oa(&inst, &bounds, &partition, &RelaxationOptions::default()).unwrap();
        let pump = inst.pump_indices()[0];
        let pipe = (0..inst.links.len()).find(|&l| inst.links[l].is_pipe()).unwrap();
        let pz0 = model.variables[model.var(VarKey::Status { link: pump, k: 0 }).unwrap()].branch_priority;
        let py0 = model.variables[model.var(VarKey::Direction { link: pipe, k: 0 }).unwrap()].branch_priority;
        let pz1 = model.variables[model.var(VarKey::Status { link: pump, k: 1 }).unwrap()].branch_priority;
        let py1 = model.variables[model.var(VarKey::Direction { link: pipe, k: 1 }).unwrap()].branch_priority;
        assert!(pz0 > py0 && py0 > pz1 && pz1 > py1);
    }

    #[test]
    fn lifted_pump_tank_trajectories_satisfy_both_relaxations() {
        let inst = fixtures::pump_tank_instance(3);
        let bounds = BoundsStore::naive(&inst);
        let partition = Partition::build(&inst, &bounds, 0.5).unwrap();
        let schedule = Schedule::uniform(&inst, true);
        let sim = crate::hydraulics::simulate(&inst, &schedule).unwrap();
        assert!(sim.feasible, "{:?}", sim.violations);
        for model in [
            build_oa(&inst, &bounds, &partition, &RelaxationOptions::default()).unwrap(),
            build_pw(&inst, &bounds, &partition, &RelaxationOptions::default()).unwrap(),
        ] {
            let x = lift_assignment(&inst, &model, &bounds, &partition, &schedule, &sim).unwrap();
            let viol = model.max_violation(&x);
            assert!(viol <= 1e-7, "violation {viol}");
        }
    }
}

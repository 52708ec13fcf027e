//! Optimization-based preprocessing: bound tightening over relaxations of the
//! scheduling problem and pairwise optimization-based cut generation.
//!
//! Every tightening subproblem minimizes or maximizes one model variable over
//! a relaxation whose feasible set contains all liftable schedules, so the
//! resulting bounds and cuts remain valid for the exact problem. Subproblems
//! that hit their time budget contribute their dual bound instead of an
//! optimum, which only loosens the result.


use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cuts::{Cut, CutScope, Provenance};
use crate::formulation::{ModelBuilder, Partition, RelaxationKind, RelaxationOptions, TemporalScope};
use crate::model::{Dir, MilpModel, Sense, VarKey, VarKind};
use crate::network::{Instance, LinkIdx, NodeIdx};
use crate::solver::{solve_lp, solve_mip, Limits, LpStatus, MipStatus};

/// Outward safety margin applied to every tightened bound, absorbing LP
/// tolerance noise.
pub const BOUND_MARGIN: f64 = 1e-6;
/// A binary's relaxation minimum above this fixes it to one (and below one
/// minus this for the maximum side, to zero).
const LATTICE_TOL: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("root relaxation is infeasible: the instance admits no schedule")]
    InfeasibleInstance,
    #[error(transparent)]
    Formulation(#[from] crate::formulation::FormulationError),
}

// ---------------------------------------------------------------------------
// bounds store

/// Mutable per-(entity, step) bounds, the working product of bound tightening.
///
/// Directed flow bounds on pumps are conditional on the pump running; on
/// pipes and valves they are conditional on the flow direction indicator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsStore {
    /// `[node][k]` head bounds; tanks carry one extra index.
    head: Vec<Vec<(f64, f64)>>,
    /// `[link][k]` signed flow bounds.
    flow: Vec<Vec<(f64, f64)>>,
    /// `[link][k]` directed bounds, positive direction.
    dir_pos: Vec<Vec<(f64, f64)>>,
    /// `[link][k]` directed bounds, negative direction.
    dir_neg: Vec<Vec<(f64, f64)>>,
    /// `[link][k]` direction indicator bounds on the 0/1 lattice.
    direction: Vec<Vec<(f64, f64)>>,
    /// `[link][k]` status bounds on the 0/1 lattice (pumps and valves).
    status: Vec<Vec<(f64, f64)>>,
}

impl BoundsStore {
    /// Network-derived bounds: heads and flows from the instance, directions
    /// and statuses free.
    pub fn naive(instance: &Instance) -> Self {
        let horizon = instance.horizon();
        let head = instance
            .nodes
            .iter()
            .map(|n| n.head_lb.iter().zip(&n.head_ub).map(|(&l, &u)| (l, u)).collect())
            .collect();
        let flow = instance
            .links
            .iter()
            .map(|l| l.flow_lb.iter().zip(&l.flow_ub).map(|(&lo, &hi)| (lo, hi)).collect())
            .collect();
        let dir_pos = instance
            .links
            .iter()
            .map(|l| (0..horizon).map(|k| (l.dir_flow_lb_pos[k], l.dir_flow_ub_pos(k))).collect())
            .collect();
        let dir_neg = instance
            .links
            .iter()
            .map(|l| (0..horizon).map(|k| (l.dir_flow_lb_neg[k], l.dir_flow_ub_neg(k))).collect())
            .collect();
        let direction = instance.links.iter().map(|_| vec![(0.0, 1.0); horizon]).collect();
        let status = instance.links.iter().map(|_| vec![(0.0, 1.0); horizon]).collect();
        BoundsStore { head, flow, dir_pos, dir_neg, direction, status }
    }

    pub fn head(&self, node: NodeIdx, k: usize) -> (f64, f64) {
        self.head[node][k]
    }
    pub fn flow(&self, link: LinkIdx, k: usize) -> (f64, f64) {
        self.flow[link][k]
    }
    pub fn dir(&self, link: LinkIdx, k: usize, dir: Dir) -> (f64, f64) {
        match dir {
            Dir::Pos => self.dir_pos[link][k],
            Dir::Neg => self.dir_neg[link][k],
        }
    }
    pub fn direction(&self, link: LinkIdx, k: usize) -> (f64, f64) {
        self.direction[link][k]
    }
    pub fn status(&self, link: LinkIdx, k: usize) -> (f64, f64) {
        self.status[link][k]
    }

    pub fn pooled_head(&self, node: NodeIdx) -> (f64, f64) {
        pool(&self.head[node])
    }
    pub fn pooled_flow(&self, link: LinkIdx) -> (f64, f64) {
        pool(&self.flow[link])
    }
    pub fn pooled_dir(&self, link: LinkIdx, dir: Dir) -> (f64, f64) {
        match dir {
            Dir::Pos => pool(&self.dir_pos[link]),
            Dir::Neg => pool(&self.dir_neg[link]),
        }
    }
    pub fn pooled_direction(&self, link: LinkIdx) -> (f64, f64) {
        pool(&self.direction[link])
    }
    pub fn pooled_status(&self, link: LinkIdx) -> (f64, f64) {
        pool(&self.status[link])
    }

    fn slot(&mut self, target: &Target) -> &mut (f64, f64) {
        match *target {
            Target::Head { node, k } => &mut self.head[node][k],
            Target::DirFlow { link, k, dir: Dir::Pos, .. } => &mut self.dir_pos[link][k],
            Target::DirFlow { link, k, dir: Dir::Neg, .. } => &mut self.dir_neg[link][k],
            Target::Direction { link, k } => &mut self.direction[link][k],
            Target::Status { link, k } => &mut self.status[link][k],
        }
    }

    /// Shrinks one interval, never widening; returns the largest relative
    /// movement of either endpoint.
    fn tighten(&mut self, target: &Target, lb: Option<f64>, ub: Option<f64>) -> f64 {
        let slot = self.slot(target);
        let mut moved = 0.0f64;
        if let Some(lb) = lb {
            let candidate = (lb - BOUND_MARGIN).max(slot.0).min(slot.1);
            moved = moved.max((candidate - slot.0).abs() / slot.0.abs().max(1.0));
            slot.0 = candidate;
        }
        if let Some(ub) = ub {
            let candidate = (ub + BOUND_MARGIN).min(slot.1).max(slot.0);
            moved = moved.max((slot.1 - candidate).abs() / slot.1.abs().max(1.0));
            slot.1 = candidate;
        }
        moved
    }

    /// Fixes a binary coordinate to an exact lattice value.
    fn fix_lattice(&mut self, target: &Target, value: bool) -> f64 {
        let slot = self.slot(target);
        let v = if value { 1.0 } else { 0.0 };
        let moved = (slot.0 - v).abs().max((slot.1 - v).abs());
        slot.0 = v;
        slot.1 = v;
        moved
    }

    /// `true` if every interval of `self` is contained in `other`'s.
    pub fn contained_in(&self, other: &BoundsStore) -> bool {
        let ok = |a: &Vec<Vec<(f64, f64)>>, b: &Vec<Vec<(f64, f64)>>| {
            a.iter().zip(b).all(|(ra, rb)| {
                ra.iter().zip(rb).all(|(&(l1, u1), &(l2, u2))| l1 >= l2 - 1e-12 && u1 <= u2 + 1e-12)
            })
        };
        ok(&self.head, &other.head)
            && ok(&self.flow, &other.flow)
            && ok(&self.dir_pos, &other.dir_pos)
            && ok(&self.dir_neg, &other.dir_neg)
            && ok(&self.direction, &other.direction)
            && ok(&self.status, &other.status)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bounds serialization")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

fn pool(row: &[(f64, f64)]) -> (f64, f64) {
    let lo = row.iter().map(|b| b.0).fold(f64::INFINITY, f64::min);
    let hi = row.iter().map(|b| b.1).fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

// ---------------------------------------------------------------------------
// bound tightening

/// The five tightening strategies, ordered by temporal fidelity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObbtVariant {
    /// Pooled single step, outer approximation, continuous relaxation.
    BtSr,
    /// Pooled single step, piecewise model, integrality enforced.
    BtSs,
    /// Per-step sequence, piecewise model, integrality enforced; no
    /// intertemporal coupling.
    BtSq,
    /// Full horizon, outer approximation, continuous relaxation.
    BtTr,
    /// Full horizon, piecewise model; integrality only at the step being
    /// tightened.
    BtTs,
}

impl ObbtVariant {
    pub fn parse(text: &str) -> Option<ObbtVariant> {
        match text.to_ascii_lowercase().replace('_', "-").as_str() {
            "bt-sr" => Some(ObbtVariant::BtSr),
            "bt-ss" => Some(ObbtVariant::BtSs),
            "bt-sq" => Some(ObbtVariant::BtSq),
            "bt-tr" => Some(ObbtVariant::BtTr),
            "bt-ts" => Some(ObbtVariant::BtTs),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ObbtVariant::BtSr => "BT-SR",
            ObbtVariant::BtSs => "BT-SS",
            ObbtVariant::BtSq => "BT-SQ",
            ObbtVariant::BtTr => "BT-TR",
            ObbtVariant::BtTs => "BT-TS",
        }
    }

    fn relaxation(&self) -> RelaxationKind {
        match self {
            ObbtVariant::BtSr | ObbtVariant::BtTr => RelaxationKind::OuterApproximation,
            _ => RelaxationKind::Piecewise,
        }
    }

    fn integral(&self) -> bool {
        matches!(self, ObbtVariant::BtSs | ObbtVariant::BtSq | ObbtVariant::BtTs)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObbtConfig {
    pub variant: ObbtVariant,
    pub max_iterations: usize,
    /// Wall-clock budget per subproblem, seconds.
    pub time_budget_s: Option<f64>,
    /// Stop when the largest relative bound movement falls below this.
    pub tolerance: f64,
    /// Flow partition tolerance for the relaxations used in subproblems.
    pub xi: f64,
    /// Worker threads for independent subproblems (1 = sequential).
    pub jobs: usize,
}

impl ObbtConfig {
    pub fn new(variant: ObbtVariant) -> Self {
        ObbtConfig {
            variant,
            max_iterations: 25,
            time_budget_s: Some(60.0),
            tolerance: 1e-4,
            xi: 1.0,
            jobs: 1,
        }
    }
}

/// One tightening target, identifying both the bound slot and the model
/// variable plus any conditioning fix.
#[derive(Debug, Clone, PartialEq)]
enum Target {
    Head { node: NodeIdx, k: usize },
    DirFlow { link: LinkIdx, k: usize, dir: Dir, fix: ConditionFix },
    Direction { link: LinkIdx, k: usize },
    Status { link: LinkIdx, k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ConditionFix {
    /// Fix the direction indicator to match the tightened direction.
    Direction,
    /// Fix the pump/valve status to one.
    StatusOn,
}

#[derive(Debug, Clone)]
enum Outcome {
    Interval { lb: Option<f64>, ub: Option<f64> },
    FixBinary(bool),
    /// The conditioning fix is impossible; fix the condition the other way.
    ConditionImpossible,
    Nothing,
}

/// Runs the configured tightening variant until fixpoint, iteration cap, or
/// sub-tolerance movement, returning the tightened store.
pub fn obbt(
    instance: &Instance,
    bounds: &BoundsStore,
    config: &ObbtConfig,
) -> Result<BoundsStore, PreprocessError> {
    let mut current = bounds.clone();
    for _ in 0..config.max_iterations {
        let moved = obbt_iteration(instance, &mut current, config)?;
        if moved < config.tolerance {
            break;
        }
    }
    Ok(current)
}

fn obbt_iteration(
    instance: &Instance,
    bounds: &mut BoundsStore,
    config: &ObbtConfig,
) -> Result<f64, PreprocessError> {
    let scopes: Vec<TemporalScope> = match config.variant {
        ObbtVariant::BtSr | ObbtVariant::BtSs => vec![TemporalScope::PooledStep],
        ObbtVariant::BtSq => (0..instance.horizon()).map(TemporalScope::SingleStep).collect(),
        ObbtVariant::BtTr | ObbtVariant::BtTs => vec![TemporalScope::Full],
    };

    let mut moved = 0.0f64;
    for scope in scopes {
        let snapshot = bounds.clone();
        let model = build_relaxation(instance, &snapshot, scope, config)?;

        // an infeasible root certifies the instance itself infeasible
        let mut probe = model.clone();
        probe.relax_integrality();
        if solve_lp(&probe).status == LpStatus::Infeasible {
            return Err(PreprocessError::InfeasibleInstance);
        }

        let targets = targets_for(instance, scope);
        let solve_target = |target: &Target| -> (Outcome, Outcome) {
            let lo = solve_direction_of(instance, &model, config, target, false);
            let hi = solve_direction_of(instance, &model, config, target, true);
            (lo, hi)
        };

        let results: Vec<(Target, (Outcome, Outcome))> = if config.jobs > 1 {
            use rayon::prelude::*;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(config.jobs)
                .build()
                .expect("thread pool");
            pool.install(|| {
                targets.par_iter().map(|t| (t.clone(), solve_target(t))).collect()
            })
        } else {
            targets.iter().map(|t| (t.clone(), solve_target(t))).collect()
        };

        for (target, (lo, hi)) in results {
            moved = moved.max(apply_outcome(instance, bounds, scope, &target, lo, false));
            moved = moved.max(apply_outcome(instance, bounds, scope, &target, hi, true));
        }
    }
    Ok(moved)
}

fn build_relaxation(
    instance: &Instance,
    bounds: &BoundsStore,
    scope: TemporalScope,
    config: &ObbtConfig,
) -> Result<MilpModel, PreprocessError> {
    let mut options = RelaxationOptions::default();
    options.kind = config.variant.relaxation();
    options.xi = config.xi;
    let partition = Partition::build_scoped(instance, bounds, config.xi, scope)?;
    let mut builder = ModelBuilder::new(instance, bounds, scope, options.clone());
    builder.add_shared_constraints()?;
    builder.add_direction_decomposition()?;
    builder.add_outer_approximation(&partition)?;
    if options.kind == RelaxationKind::Piecewise {
        builder.add_piecewise(&partition)?;
    }
    let mut model = builder.into_model();
    if !config.variant.integral() {
        model.relax_integrality();
    }
    model.objective.iter_mut().for_each(|c| *c = 0.0);
    model.objective_constant = 0.0;
    Ok(model)
}

fn targets_for(instance: &Instance, scope: TemporalScope) -> Vec<Target> {
    let mut targets = Vec::new();
    let steps = scope.steps(instance);
    let full = scope == TemporalScope::Full;
    for (n, node) in instance.nodes.iter().enumerate() {
        let extra = if node.is_tank() && full { 1 } else { 0 };
        for k in 0..steps + extra {
            targets.push(Target::Head { node: n, k });
        }
    }
    for (l, link) in instance.links.iter().enumerate() {
        for k in 0..steps {
            if link.is_pipe() || link.is_valve() {
                for dir in Dir::BOTH {
                    targets.push(Target::DirFlow { link: l, k, dir, fix: ConditionFix::Direction });
                }
                targets.push(Target::Direction { link: l, k });
            }
            if link.is_controllable() {
                targets.push(Target::Status { link: l, k });
            }
            if link.is_pump() {
                targets.push(Target::DirFlow { link: l, k, dir: Dir::Pos, fix: ConditionFix::StatusOn });
            }
        }
    }
    targets
}

fn model_key(target: &Target) -> VarKey {
    match *target {
        Target::Head { node, k } => VarKey::Head { node, k },
        Target::DirFlow { link, k, dir, .. } => VarKey::DirFlow { link, k, dir },
        Target::Direction { link, k } => VarKey::Direction { link, k },
        Target::Status { link, k } => VarKey::Status { link, k },
    }
}

fn solve_direction_of(
    instance: &Instance,
    model: &MilpModel,
    config: &ObbtConfig,
    target: &Target,
    maximize: bool,
) -> Outcome {
    let _ = instance;
    let Some(var) = model.lookup(model_key(target)) else {
        return Outcome::Nothing;
    };
    let mut sub = model.clone();
    sub.objective.iter_mut().for_each(|c| *c = 0.0);
    sub.set_objective_coefficient(var, if maximize { -1.0 } else { 1.0 });

    // conditioning fixes
    if let Target::DirFlow { link, k, dir, fix } = *target {
        match fix {
            ConditionFix::Direction => {
                let y = sub.lookup(VarKey::Direction { link, k }).expect("direction var");
                let v = if dir == Dir::Pos { 1.0 } else { 0.0 };
                sub.variables[y].lb = v;
                sub.variables[y].ub = v;
            }
            ConditionFix::StatusOn => {
                let z = sub.lookup(VarKey::Status { link, k }).expect("status var");
                sub.variables[z].lb = 1.0;
                sub.variables[z].ub = 1.0;
            }
        }
        if sub.variables[sub.lookup(model_key(target)).unwrap()].lb
            > sub.variables[sub.lookup(model_key(target)).unwrap()].ub
        {
            return Outcome::Nothing;
        }
    }

    // partial integrality for BT-TS: only the tightened step stays integral
    if config.variant == ObbtVariant::BtTs {
        let step = match *target {
            Target::Head { k, .. } => k,
            Target::DirFlow { k, .. } => k,
            Target::Direction { k, .. } => k,
            Target::Status { k, .. } => k,
        };
        for v in &mut sub.variables {
            let vk = match v.key {
                VarKey::Direction { k, .. }
                | VarKey::Status { k, .. }
                | VarKey::SwitchOn { k, .. }
                | VarKey::SwitchOff { k, .. }
                | VarKey::IntervalActive { k, .. } => Some(k),
                _ => None,
            };
            if let Some(k) = vk {
                if k != step {
                    v.kind = VarKind::Continuous;
                }
            }
        }
    }

    let limits = Limits { time_limit_s: config.time_budget_s, node_limit: None, gap_target: 0.0 };
    let result = solve_mip(&sub, &limits);
    let value = match result.status {
        MipStatus::Optimal => result.objective.expect("optimal objective"),
        MipStatus::Infeasible => {
            return match target {
                Target::DirFlow { .. } => Outcome::ConditionImpossible,
                _ => Outcome::Nothing,
            };
        }
        MipStatus::Unbounded => return Outcome::Nothing,
        MipStatus::LimitReached => {
            // the dual bound is a valid one-sided bound on the optimum
            if result.dual_bound.is_finite() {
                result.dual_bound
            } else {
                return Outcome::Nothing;
            }
        }
    };
    let value = if maximize { -value } else { value };

    match target {
        Target::Direction { .. } | Target::Status { .. } => {
            if maximize && value < 1.0 - LATTICE_TOL {
                Outcome::FixBinary(false)
            } else if !maximize && value > LATTICE_TOL {
                Outcome::FixBinary(true)
            } else {
                Outcome::Nothing
            }
        }
        _ => {
            if maximize {
                Outcome::Interval { lb: None, ub: Some(value) }
            } else {
                Outcome::Interval { lb: Some(value), ub: None }
            }
        }
    }
}

fn apply_outcome(
    instance: &Instance,
    bounds: &mut BoundsStore,
    scope: TemporalScope,
    target: &Target,
    outcome: Outcome,
    _maximize: bool,
) -> f64 {
    // Pooled scopes write the tightened bound back to every step; a
    // single-step scope solved its model at index 0 but owns one true step.
    // A tank's final head (index K) belongs to no steady state, so only the
    // full-horizon scope may touch it.
    let steps_of = |k: usize, _tank_head: bool| -> Vec<usize> {
        match scope {
            TemporalScope::PooledStep => (0..instance.horizon()).collect(),
            TemporalScope::SingleStep(step) => vec![step],
            TemporalScope::Full => vec![k],
        }
    };
    let retarget = |target: &Target, k: usize| -> Target {
        match *target {
            Target::Head { node, .. } => Target::Head { node, k },
            Target::DirFlow { link, dir, fix, .. } => Target::DirFlow { link, k, dir, fix },
            Target::Direction { link, .. } => Target::Direction { link, k },
            Target::Status { link, .. } => Target::Status { link, k },
        }
    };

    let (k0, _is_tank_head) = match *target {
        Target::Head { node, k } => (k, instance.nodes[node].is_tank()),
        Target::DirFlow { k, .. } | Target::Direction { k, .. } | Target::Status { k, .. } => (k, false),
    };

    let mut moved = 0.0f64;
    for k in steps_of(k0, _is_tank_head) {
        let t = retarget(target, k);
        match &outcome {
            Outcome::Interval { lb, ub } => {
                moved = moved.max(bounds.tighten(&t, *lb, *ub));
            }
            Outcome::FixBinary(v) => {
                moved = moved.max(bounds.fix_lattice(&t, *v));
            }
            Outcome::ConditionImpossible => match *target {
                Target::DirFlow { link, dir, fix: ConditionFix::Direction, .. } => {
                    let fix_to = dir == Dir::Neg;
                    moved = moved.max(bounds.fix_lattice(&Target::Direction { link, k }, fix_to));
                    moved = moved.max(bounds.tighten(
                        &Target::DirFlow { link, k, dir, fix: ConditionFix::Direction },
                        Some(0.0 - BOUND_MARGIN),
                        Some(0.0 + BOUND_MARGIN - BOUND_MARGIN),
                    ));
                }
                Target::DirFlow { link, fix: ConditionFix::StatusOn, .. } => {
                    moved = moved.max(bounds.fix_lattice(&Target::Status { link, k }, false));
                }
                _ => {}
            },
            Outcome::Nothing => {}
        }
    }
    moved
}

// ---------------------------------------------------------------------------
// optimization-based cut generation

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObcgConfig {
    pub xi: f64,
    pub time_budget_s: Option<f64>,
    pub jobs: usize,
}

impl Default for ObcgConfig {
    fn default() -> Self {
        ObcgConfig { xi: 1.0, time_budget_s: Some(60.0), jobs: 1 }
    }
}

/// A variable fixing discovered during cut generation, expressed at the
/// pooled step and applicable to every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixing {
    pub key: VarKey,
    pub value: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ObcgStats {
    pub pairs_examined: usize,
    pub subproblems_solved: usize,
    pub subproblems_failed: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ObcgOutput {
    pub cuts: Vec<Cut>,
    pub fixings: Vec<Fixing>,
    pub stats: ObcgStats,
}

impl ObcgOutput {
    /// Applies discovered status/direction fixings to a bounds store at every
    /// step.
    pub fn apply_fixings(&self, instance: &Instance, bounds: &mut BoundsStore) {
        for fix in &self.fixings {
            for k in 0..instance.horizon() {
                match fix.key {
                    VarKey::Direction { link, .. } => {
                        bounds.fix_lattice(&Target::Direction { link, k }, fix.value);
                    }
                    VarKey::Status { link, .. } => {
                        bounds.fix_lattice(&Target::Status { link, k }, fix.value);
                    }
                    _ => {}
                }
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("obcg serialization")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// The pooled steady-state relaxation shared by the cut generation passes:
/// every per-step parameter is relaxed to its horizon range, so conclusions
/// hold for each steady state and therefore for the full problem.
fn obcg_model(
    instance: &Instance,
    bounds: &BoundsStore,
    config: &ObcgConfig,
) -> Result<MilpModel, PreprocessError> {
    let mut options = RelaxationOptions::default();
    options.kind = RelaxationKind::Piecewise;
    options.xi = config.xi;
    let partition = Partition::build_scoped(instance, bounds, config.xi, TemporalScope::PooledStep)?;
    let mut builder = ModelBuilder::new(instance, bounds, TemporalScope::PooledStep, options);
    builder.add_shared_constraints()?;
    builder.add_direction_decomposition()?;
    builder.add_outer_approximation(&partition)?;
    builder.add_piecewise(&partition)?;
    let mut model = builder.into_model();
    model.objective.iter_mut().for_each(|c| *c = 0.0);
    model.objective_constant = 0.0;
    Ok(model)
}

fn obcg_binaries(instance: &Instance) -> Vec<VarKey> {
    let mut keys = Vec::new();
    for (l, link) in instance.links.iter().enumerate() {
        keys.push(VarKey::Direction { link: l, k: 0 });
        if link.is_controllable() {
            keys.push(VarKey::Status { link: l, k: 0 });
        }
    }
    keys
}

fn key_link(key: &VarKey) -> Option<LinkIdx> {
    match *key {
        VarKey::Direction { link, .. } | VarKey::Status { link, .. } => Some(link),
        _ => None,
    }
}

/// Replicates a pooled-step relation across the horizon.
fn replicate(
    instance: &Instance,
    terms: &[(VarKey, f64)],
    sense: Sense,
    rhs: f64,
    provenance: Provenance,
) -> Vec<Cut> {
    (0..instance.horizon())
        .map(|k| Cut {
            terms: terms.iter().map(|&(key, c)| (rekey(key, k), c)).collect(),
            sense,
            rhs,
            provenance,
            scope: CutScope::Step(k),
        })
        .collect()
}

fn rekey(key: VarKey, k: usize) -> VarKey {
    match key {
        VarKey::Head { node, .. } => VarKey::Head { node, k },
        VarKey::Flow { link, .. } => VarKey::Flow { link, k },
        VarKey::DirFlow { link, dir, .. } => VarKey::DirFlow { link, k, dir },
        VarKey::Direction { link, .. } => VarKey::Direction { link, k },
        VarKey::Status { link, .. } => VarKey::Status { link, k },
        VarKey::Gain { link, .. } => VarKey::Gain { link, k },
        VarKey::TankFlow { node, .. } => VarKey::TankFlow { node, k },
        other => other,
    }
}

fn fix_and_solve(
    model: &MilpModel,
    objective_key: VarKey,
    maximize: bool,
    fix: (VarKey, f64),
    limits: &Limits,
) -> Result<Option<f64>, ()> {
    let var = model.lookup(objective_key).ok_or(())?;
    let fix_var = model.lookup(fix.0).ok_or(())?;
    let mut sub = model.clone();
    sub.set_objective_coefficient(var, if maximize { -1.0 } else { 1.0 });
    sub.variables[fix_var].lb = fix.1;
    sub.variables[fix_var].ub = fix.1;
    let result = solve_mip(&sub, limits);
    match result.status {
        MipStatus::Optimal => Ok(Some(if maximize {
            -result.objective.expect("objective")
        } else {
            result.objective.expect("objective")
        })),
        MipStatus::Infeasible => Ok(None),
        MipStatus::LimitReached if result.dual_bound.is_finite() => {
            Ok(Some(if maximize { -result.dual_bound } else { result.dual_bound }))
        }
        _ => Err(()),
    }
}

/// Pairwise binary-binary cut generation with the second variable fixed to
/// `fix_value`. Implied equalities become ordering or covering cuts valid at
/// every step.
pub fn obcg_binary_binary(
    instance: &Instance,
    bounds: &BoundsStore,
    fix_value: bool,
    config: &ObcgConfig,
) -> Result<ObcgOutput, PreprocessError> {
    let model = obcg_model(instance, bounds, config)?;
    let keys = obcg_binaries(instance);
    let limits = Limits { time_limit_s: config.time_budget_s, node_limit: None, gap_target: 0.0 };
    let fv = if fix_value { 1.0 } else { 0.0 };

    let mut out = ObcgOutput::default();
    for &x1 in &keys {
        for &x2 in &keys {
            if x1 == x2 || key_link(&x1) == key_link(&x2) {
                continue;
            }
            out.stats.pairs_examined += 1;
            let lo = fix_and_solve(&model, x1, false, (x2, fv), &limits);
            let hi = fix_and_solve(&model, x1, true, (x2, fv), &limits);
            let (lo, hi) = match (lo, hi) {
                (Ok(a), Ok(b)) => (a, b),
                _ => {
                    out.stats.subproblems_failed += 1;
                    continue;
                }
            };
            out.stats.subproblems_solved += 2;
            let (Some(lo), Some(hi)) = (lo, hi) else {
                // fixing x2 = fv is itself impossible
                out.fixings.push(Fixing { key: x2, value: !fix_value });
                continue;
            };
            let both_zero = lo < LATTICE_TOL && hi < LATTICE_TOL;
            let both_one = lo > 1.0 - LATTICE_TOL && hi > 1.0 - LATTICE_TOL;
            let relation: Option<(Vec<(VarKey, f64)>, Sense, f64)> = if !fix_value {
                if both_zero {
                    // x2 = 0 forces x1 = 0
                    Some((vec![(x1, 1.0), (x2, -1.0)], Sense::Le, 0.0))
                } else if both_one {
                    Some((vec![(x1, 1.0), (x2, 1.0)], Sense::Ge, 1.0))
                } else {
                    None
                }
            } else if both_zero {
                Some((vec![(x1, 1.0), (x2, 1.0)], Sense::Le, 1.0))
            } else if both_one {
                Some((vec![(x1, 1.0), (x2, -1.0)], Sense::Ge, 0.0))
            } else {
                None
            };
            if let Some((terms, sense, rhs)) = relation {
                out.cuts.extend(replicate(instance, &terms, sense, rhs, Provenance::Obcg));
            }
        }
    }
    Ok(out)
}

/// Pairwise binary-continuous cut generation: conditional variable bounds
/// under each fixing of the binary.
pub fn obcg_binary_continuous(
    instance: &Instance,
    bounds: &BoundsStore,
    config: &ObcgConfig,
) -> Result<ObcgOutput, PreprocessError> {
    let model = obcg_model(instance, bounds, config)?;
    let binaries = obcg_binaries(instance);
    let mut continuous: Vec<VarKey> = Vec::new();
    for l in 0..instance.links.len() {
        continuous.push(VarKey::Flow { link: l, k: 0 });
    }
    for t in instance.tank_indices() {
        continuous.push(VarKey::TankFlow { node: t, k: 0 });
    }
    for n in 0..instance.nodes.len() {
        continuous.push(VarKey::Head { node: n, k: 0 });
    }
    let limits = Limits { time_limit_s: config.time_budget_s, node_limit: None, gap_target: 0.0 };

    let mut out = ObcgOutput::default();
    for &x1 in &continuous {
        let id = match model.lookup(x1) {
            Some(id) => id,
            None => continue,
        };
        let (global_lb, global_ub) = (model.variables[id].lb, model.variables[id].ub);
        for &x2 in &binaries {
            out.stats.pairs_examined += 1;
            let mut conditional = [None, None, None, None]; // lb0, ub0, lb1, ub1
            let mut failed = false;
            for (slot, (maximize, fv)) in
                [(false, 0.0), (true, 0.0), (false, 1.0), (true, 1.0)].iter().enumerate()
            {
                match fix_and_solve(&model, x1, *maximize, (x2, *fv), &limits) {
                    Ok(v) => conditional[slot] = v,
                    Err(()) => {
                        failed = true;
                        break;
                    }
                }
            }
            if failed {
                out.stats.subproblems_failed += 1;
                continue;
            }
            out.stats.subproblems_solved += 4;
            let [lb0, ub0, lb1, ub1] = conditional;
            if lb0.is_none() && ub0.is_none() {
                out.fixings.push(Fixing { key: x2, value: true });
                continue;
            }
            if lb1.is_none() && ub1.is_none() {
                out.fixings.push(Fixing { key: x2, value: false });
                continue;
            }
            // conditional bound cuts; a missing side falls back to the
            // variable's global bound (always valid)
            let lb0 = lb0.unwrap_or(global_lb);
            let ub0 = ub0.unwrap_or(global_ub);
            let lb1 = lb1.unwrap_or(global_lb);
            let ub1 = ub1.unwrap_or(global_ub);
            let rows: [(f64, Sense, f64); 4] = [
                // x1 ≥ lb0·(1−x2) + global_lb·x2
                (global_lb - lb0, Sense::Ge, lb0),
                // x1 ≤ ub0·(1−x2) + global_ub·x2
                (global_ub - ub0, Sense::Le, ub0),
                // x1 ≥ global_lb·(1−x2) + lb1·x2
                (lb1 - global_lb, Sense::Ge, global_lb),
                // x1 ≤ global_ub·(1−x2) + ub1·x2
                (ub1 - global_ub, Sense::Le, global_ub),
            ];
            for (zcoef, sense, rhs) in rows {
                let terms = vec![(x1, 1.0), (x2, -zcoef)];
                out.cuts.extend(replicate(instance, &terms, sense, rhs, Provenance::Obcg));
            }
        }
    }
    Ok(out)
}

//! Top-level scheduling solve: build a relaxation, search it with branch and
//! bound, and certify every integer-feasible candidate by extended-period
//! simulation. Infeasible candidates are excluded with combinatorial no-good
//! cuts on their failing prefix; feasible ones update the incumbent with
//! their simulated (true) cost and are excluded as well, so the search
//! enumerates schedules in relaxation-bound order until the bound meets the
//! incumbent.

use std::collections::BTreeMap;
use std::time::Instant;

use thiserror::Error;

use crate::cuts::{self, Cut, DualityMode};
use crate::formulation::{self, Partition, RelaxationKind, RelaxationOptions};
use crate::hydraulics::{simulate, ControlState, Schedule};
use crate::model::{MilpModel, VarKey};
use crate::network::Instance;
use crate::preprocess::BoundsStore;
use crate::solver::bb::{branch_and_bound, CallbackResult, LazyRow};
use crate::solver::{Limits, MipStatus};

#[derive(Debug, Error)]
pub enum OwfError {
    #[error(transparent)]
    Formulation(#[from] crate::formulation::FormulationError),
    #[error(transparent)]
    Cut(#[from] crate::cuts::CutError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error("simulation fault: {0}")]
    Hydraulics(#[from] crate::hydraulics::HydraulicsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    LimitReached,
    InfeasibleCertified,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::LimitReached => "limit_reached",
            Termination::InfeasibleCertified => "infeasible",
        }
    }
}

#[derive(Debug, Clone)]
pub struct OwfResult {
    /// Best simulator-certified schedule and its true cost.
    pub incumbent: Option<(Schedule, f64)>,
    /// Valid lower bound on the exact problem.
    pub lower_bound: Option<f64>,
    pub nodes: u64,
    pub wall_time_s: f64,
    pub termination: Termination,
}

impl OwfResult {
    pub fn upper_bound(&self) -> Option<f64> {
        self.incumbent.as_ref().map(|(_, c)| *c)
    }
}

/// Builds the configured relaxation with all requested cut families applied.
pub fn build_relaxation_model(
    instance: &Instance,
    options: &RelaxationOptions,
    bounds: &BoundsStore,
    extra_cuts: &[Cut],
) -> Result<(MilpModel, Partition), OwfError> {
    let partition = Partition::build(instance, bounds, options.xi)?;
    let mut model = match options.kind {
        RelaxationKind::OuterApproximation => formulation::build_oa(instance, bounds, &partition, options)?,
        RelaxationKind::Piecewise => formulation::build_pw(instance, bounds, &partition, options)?,
    };
    if options.symmetry_cuts {
        cuts::apply_cuts(&mut model, &cuts::symmetry_cuts(instance))?;
    }
    if options.direction_vis {
        cuts::apply_cuts(&mut model, &cuts::direction_vis(instance))?;
    }
    if options.duality_cuts {
        let mode = if options.share_pw_duality && options.kind == RelaxationKind::Piecewise {
            DualityMode::SharedPiecewise
        } else {
            DualityMode::Tangents
        };
        cuts::duality_cuts(instance, bounds, &partition, mode)?.apply(&mut model)?;
    }
    for cut in extra_cuts {
        cuts::apply_cut(&mut model, cut)?;
    }
    Ok((model, partition))
}

/// Reads the pump/valve statuses out of a relaxation point.
pub fn schedule_from_point(instance: &Instance, model: &MilpModel, x: &[f64]) -> Schedule {
    let mut steps = Vec::with_capacity(instance.horizon());
    for k in 0..instance.horizon() {
        let mut status = BTreeMap::new();
        for l in instance.controllable_indices() {
            let id = model.lookup(VarKey::Status { link: l, k }).expect("status registered");
            status.insert(l, x[id] > 0.5);
        }
        steps.push(ControlState::new(instance, status).expect("full control state"));
    }
    Schedule { steps }
}

/// Solves the scheduling problem over the given bounds and extra cuts.
pub fn solve_owf(
    instance: &Instance,
    options: &RelaxationOptions,
    bounds: &BoundsStore,
    extra_cuts: &[Cut],
    limits: &Limits,
) -> Result<OwfResult, OwfError> {
    let started = Instant::now();
    let (model, _partition) = build_relaxation_model(instance, options, bounds, extra_cuts)?;

    let mut best: Option<(Schedule, f64)> = None;
    let mut callback_error: Option<OwfError> = None;
    {
        let best = &mut best;
        let callback_error = &mut callback_error;
        let model_ref = &model;
        let mut cb = |x: &[f64], _obj: f64| -> CallbackResult {
            let schedule = schedule_from_point(instance, model_ref, x);
            let sim = match simulate(instance, &schedule) {
                Ok(sim) => sim,
                Err(e) => {
                    *callback_error = Some(OwfError::Hydraulics(e));
                    return CallbackResult::default();
                }
            };
            let (k_inf, incumbent) = if sim.feasible {
                let cost = sim.cost(instance, &schedule);
                match best {
                    Some((_, c)) if *c <= cost => {}
                    _ => *best = Some((schedule.clone(), cost)),
                }
                // exclude the evaluated schedule and keep searching: the
                // relaxation's point may undervalue it, and better schedules
                // can hide behind it
                (instance.horizon(), Some(cost))
            } else {
                (sim.first_infeasible_step.unwrap_or(1), None)
            };
            let cut = match cuts::no_good_cut(instance, &schedule.steps, k_inf) {
                Ok(cut) => cut,
                Err(_) => {
                    // no controls to exclude on: accept and close the node
                    return CallbackResult { incumbent, cuts: Vec::new() };
                }
            };
            let row = LazyRow {
                terms: cut
                    .terms
                    .iter()
                    .map(|&(key, c)| (model_ref.lookup(key).expect("status registered"), c))
                    .collect(),
                sense: cut.sense,
                rhs: cut.rhs,
                label: "cut:no-good".into(),
            };
            CallbackResult { incumbent, cuts: vec![row] }
        };

        let bb = branch_and_bound(&model, Some(&mut cb), limits);
        if let Some(err) = callback_error.take() {
            return Err(err);
        }

        let wall = started.elapsed().as_secs_f64();
        let termination = match bb.status {
            MipStatus::Optimal => {
                if best.is_some() {
                    Termination::Converged
                } else {
                    Termination::InfeasibleCertified
                }
            }
            MipStatus::Infeasible => Termination::InfeasibleCertified,
            MipStatus::Unbounded | MipStatus::LimitReached => Termination::LimitReached,
        };
        let lower_bound = match termination {
            Termination::Converged => best.as_ref().map(|(_, c)| *c),
            Termination::InfeasibleCertified => None,
            Termination::LimitReached => {
                if bb.dual_bound.is_finite() {
                    Some(bb.dual_bound)
                } else {
                    None
                }
            }
        };
        return Ok(OwfResult {
            incumbent: best.clone(),
            lower_bound,
            nodes: bb.nodes,
            wall_time_s: wall,
            termination,
        });
    }
}

/// Relative optimality gap `(ub − lb)/ub`, clamped at zero. When `ub` is zero
/// with a nonzero `lb` the difference cannot be normalized and the result is
/// flagged absolute.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gap {
    pub value: f64,
    pub relative: bool,
}

pub fn gap(lb: f64, ub: f64) -> Gap {
    if ub == 0.0 {
        if lb == 0.0 {
            Gap { value: 0.0, relative: true }
        } else {
            Gap { value: (ub - lb).abs(), relative: false }
        }
    } else {
        Gap { value: ((ub - lb) / ub).max(0.0), relative: true }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_examples_match_reported_statistics() {
        let g = gap(155.6, 155.6);
        assert!(g.relative && g.value == 0.0);
        let g = gap(92.5, 102.8);
        assert!(g.relative);
        assert!((100.0 * g.value - 10.0).abs() < 0.05, "{}", 100.0 * g.value);
        assert_eq!(format!("{:.1}", 100.0 * g.value), "10.0");
        let g = gap(0.0, 0.0);
        assert!(g.relative && g.value == 0.0);
        let g = gap(3.0, 0.0);
        assert!(!g.relative && g.value == 3.0);
        // lb slightly above ub clamps to zero
        let g = gap(10.0 + 1e-9, 10.0);
        assert_eq!(g.value, 0.0);
    }
}

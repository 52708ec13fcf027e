//! Best-bound branch and bound over a model's binary marks, with an optional
//! lazy callback at integer-feasible nodes. The callback may update the
//! incumbent value and/or return rows that are appended globally, in which
//! case the node is re-solved instead of closed.

use std::time::Instant;

use crate::model::{MilpModel, Sense, VarKind};
use crate::solver::lp::{solve_lp_with_overrides, LpStatus};
use crate::solver::Limits;

/// Integrality tolerance for branching decisions.
const INT_TOL: f64 = 1e-6;
/// Pruning slack against the incumbent.
const PRUNE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MipStatus {
    Optimal,
    Infeasible,
    Unbounded,
    LimitReached,
}

#[derive(Debug, Clone)]
pub struct MipResult {
    pub status: MipStatus,
    pub objective: Option<f64>,
    pub x: Option<Vec<f64>>,
    /// Valid lower bound on the optimum at termination.
    pub dual_bound: f64,
    pub nodes: u64,
}

/// One lazily generated row, expressed over variable ids of the solved model.
#[derive(Debug, Clone)]
pub struct LazyRow {
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
    pub label: String,
}

/// What a lazy callback decided about an integer-feasible point.
#[derive(Debug, Clone, Default)]
pub struct CallbackResult {
    /// A certified objective value for the incumbent bookkeeping (the
    /// caller's own notion of cost, not necessarily the relaxation's).
    pub incumbent: Option<f64>,
    /// Rows to append globally; nonempty rows re-queue the node.
    pub cuts: Vec<LazyRow>,
}

struct Node {
    overrides: Vec<(usize, f64, f64)>,
    bound: f64,
    id: u64,
}

/// Solves the model as a MILP without callbacks.
pub fn solve_mip(model: &MilpModel, limits: &Limits) -> MipResult {
    branch_and_bound(model, None, limits)
}

/// Best-bound search. Branching picks the most fractional binary within the
/// highest priority class, ties broken by registry order.
pub fn branch_and_bound(
    model: &MilpModel,
    mut callback: Option<&mut dyn FnMut(&[f64], f64) -> CallbackResult>,
    limits: &Limits,
) -> MipResult {
    let started = Instant::now();
    let mut work = model.clone();
    let integer_ids: Vec<usize> = work
        .variables
        .iter()
        .enumerate()
        .filter(|(_, v)| v.kind == VarKind::Binary)
        .map(|(i, _)| i)
        .collect();

    let mut open: Vec<Node> = vec![Node { overrides: Vec::new(), bound: f64::NEG_INFINITY, id: 0 }];
    let mut next_id = 1u64;
    let mut nodes_processed = 0u64;
    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    let mut best_bound_closed = f64::INFINITY;
    let mut limit_hit = false;
    let mut root_unbounded = false;

    while !open.is_empty() {
        if let Some(cap) = limits.node_limit {
            if nodes_processed >= cap {
                limit_hit = true;
                break;
            }
        }
        if let Some(t) = limits.time_limit_s {
            if started.elapsed().as_secs_f64() > t {
                limit_hit = true;
                break;
            }
        }

        // best-bound selection, deterministic on ties
        let mut pick = 0;
        for i in 1..open.len() {
            if open[i].bound < open[pick].bound
                || (open[i].bound == open[pick].bound && open[i].id < open[pick].id)
            {
                pick = i;
            }
        }
        let node = open.swap_remove(pick);

        let ub_value = incumbent.as_ref().map(|(v, _)| *v).unwrap_or(f64::INFINITY);
        if node.bound >= ub_value - PRUNE_TOL {
            best_bound_closed = best_bound_closed.min(node.bound);
            continue;
        }

        nodes_processed += 1;
        let sol = solve_lp_with_overrides(&work, &node.overrides);
        match sol.status {
            LpStatus::Infeasible => continue,
            LpStatus::Unbounded => {
                if node.overrides.is_empty() && incumbent.is_none() {
                    root_unbounded = true;
                    break;
                }
                continue;
            }
            LpStatus::TimeLimit => {
                // numerics failed on this node; treat conservatively
                best_bound_closed = best_bound_closed.min(node.bound.max(f64::NEG_INFINITY));
                limit_hit = true;
                continue;
            }
            LpStatus::Optimal => {}
        }
        let obj = sol.objective;
        if obj >= ub_value - PRUNE_TOL {
            best_bound_closed = best_bound_closed.min(obj);
            continue;
        }

        // most fractional binary in the highest priority class
        let mut branch: Option<(usize, i64, f64)> = None; // (var, priority, frac score)
        for &id in &integer_ids {
            let v = sol.x[id].clamp(work.variables[id].lb, work.variables[id].ub);
            let frac = (v - v.round()).abs();
            if frac <= INT_TOL {
                continue;
            }
            let priority = work.variables[id].branch_priority;
            let score = 0.5 - (v - v.floor() - 0.5).abs();
            let better = match branch {
                None => true,
                Some((bid, bprio, bscore)) => {
                    priority > bprio
                        || (priority == bprio && score > bscore + 1e-12)
                        || (priority == bprio && (score - bscore).abs() <= 1e-12 && id < bid)
                }
            };
            if better {
                branch = Some((id, priority, score));
            }
        }

        if std::env::var_os("OWFKIT_BB_TRACE").is_some() {
            eprintln!(
                "node {} depth {} obj {} branch {:?}",
                node.id,
                node.overrides.len(),
                obj,
                branch.map(|(id, p, s)| (id, work.var_name(id), p, s, sol.x[id]))
            );
        }
        match branch {
            None => {
                // integer feasible
                if let Some(cb) = callback.as_mut() {
                    let result = cb(&sol.x, obj);
                    if let Some(value) = result.incumbent {
                        if value < ub_value {
                            incumbent = Some((value, sol.x.clone()));
                        }
                    }
                    if !result.cuts.is_empty() {
                        for row in result.cuts {
                            work.add_constraint(row.label, row.terms, row.sense, row.rhs)
                                .expect("lazy row references solved variables");
                        }
                        open.push(Node { overrides: node.overrides, bound: obj, id: next_id });
                        next_id += 1;
                        continue;
                    }
                    best_bound_closed = best_bound_closed.min(obj);
                } else {
                    if obj < ub_value {
                        incumbent = Some((obj, sol.x.clone()));
                    }
                    best_bound_closed = best_bound_closed.min(obj);
                }
            }
            Some((id, _, _)) => {
                let value = sol.x[id].clamp(work.variables[id].lb, work.variables[id].ub);
                let mut down = node.overrides.clone();
                down.push((id, f64::NEG_INFINITY, value.floor()));
                let mut up = node.overrides;
                up.push((id, value.ceil(), f64::INFINITY));
                open.push(Node { overrides: down, bound: obj, id: next_id });
                open.push(Node { overrides: up, bound: obj, id: next_id + 1 });
                next_id += 2;
            }
        }
    }

    if root_unbounded {
        return MipResult { status: MipStatus::Unbounded, objective: None, x: None, dual_bound: f64::NEG_INFINITY, nodes: nodes_processed };
    }

    let open_bound = open.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
    match incumbent {
        Some((value, x)) => {
            let dual = if open.is_empty() && !limit_hit { value } else { open_bound.min(value) };
            let status = if open.is_empty() && !limit_hit { MipStatus::Optimal } else { MipStatus::LimitReached };
            MipResult { status, objective: Some(value), x: Some(x), dual_bound: dual, nodes: nodes_processed }
        }
        None => {
            if open.is_empty() && !limit_hit {
                MipResult { status: MipStatus::Infeasible, objective: None, x: None, dual_bound: f64::INFINITY, nodes: nodes_processed }
            } else {
                MipResult {
                    status: MipStatus::LimitReached,
                    objective: None,
                    x: None,
                    dual_bound: open_bound.min(best_bound_closed),
                    nodes: nodes_processed,
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MilpModel, Sense, VarKey, VarKind};

    fn binary(m: &mut MilpModel, link: usize) -> usize {
        m.add_variable(VarKey::Status { link, k: 0 }, 0.0, 1.0, VarKind::Binary).unwrap()
    }

    #[test]
    fn knapsack_matches_enumeration() {
        // max 4a + 5b + 3c st 2a + 3b + c ≤ 4  (min of the negation)
        let mut m = MilpModel::new();
        let a = binary(&mut m, 0);
        let b = binary(&mut m, 1);
        let c = binary(&mut m, 2);
        m.set_objective_coefficient(a, -4.0);
        m.set_objective_coefficient(b, -5.0);
        m.set_objective_coefficient(c, -3.0);
        m.add_constraint("cap", vec![(a, 2.0), (b, 3.0), (c, 1.0)], Sense::Le, 4.0).unwrap();
        let result = solve_mip(&m, &Limits::default());
        assert_eq!(result.status, MipStatus::Optimal);

        // brute force over the 8 points
        let mut best = f64::INFINITY;
        for mask in 0..8u32 {
            let (av, bv, cv) = ((mask & 1) as f64, ((mask >> 1) & 1) as f64, ((mask >> 2) & 1) as f64);
            if 2.0 * av + 3.0 * bv + cv <= 4.0 {
                best = best.min(-4.0 * av - 5.0 * bv - 3.0 * cv);
            }
        }
        assert!((result.objective.unwrap() - best).abs() < 1e-9, "{} vs {best}", result.objective.unwrap());
        assert!((result.dual_bound - best).abs() < 1e-9);
    }

    #[test]
    fn integral_root_needs_no_branching() {
        let mut m = MilpModel::new();
        let a = binary(&mut m, 0);
        m.set_objective_coefficient(a, 1.0);
        let result = solve_mip(&m, &Limits::default());
        assert_eq!(result.status, MipStatus::Optimal);
        assert_eq!(result.objective, Some(0.0));
        assert_eq!(result.nodes, 1);
    }

    #[test]
    fn always_rejecting_callback_exhausts_the_space() {
        let mut m = MilpModel::new();
        let a = binary(&mut m, 0);
        m.set_objective_coefficient(a, 1.0);
        let mut rejected = Vec::new();
        let mut cb = |x: &[f64], _obj: f64| -> CallbackResult {
            let v = x[a].round();
            rejected.push(v);
            let (coef, rhs) = if v > 0.5 { (-1.0, 0.0) } else { (1.0, 1.0) };
            CallbackResult {
                incumbent: None,
                cuts: vec![LazyRow { terms: vec![(a, coef)], sense: Sense::Ge, rhs, label: "exclude".into() }],
            }
        };
        let result = branch_and_bound(&m, Some(&mut cb), &Limits::default());
        assert_eq!(result.status, MipStatus::Infeasible);
        assert_eq!(rejected.len(), 2);
    }

    #[test]
    fn node_limit_reports_limit_reached() {
        let mut m = MilpModel::new();
        let vars: Vec<usize> = (0..6).map(|i| binary(&mut m, i)).collect();
        for &v in &vars {
            m.set_objective_coefficient(v, -1.0);
        }
        let terms: Vec<(usize, f64)> = vars.iter().map(|&v| (v, 1.0)).collect();
        m.add_constraint("odd", terms, Sense::Le, 2.5).unwrap();
        let limits = Limits { node_limit: Some(1), ..Default::default() };
        let result = solve_mip(&m, &limits);
        assert_eq!(result.status, MipStatus::LimitReached);
        assert!(result.dual_bound <= -2.5 + 1e-9);
    }
}

//! Bounded-variable primal simplex with a product-form basis inverse.
//!
//! Rows become slack columns (`Ax + s = b`), the logical basis starts with
//! the slacks, and a composite phase 1 drives out bound violations before the
//! true objective is optimized. Dantzig pricing falls back to Bland's rule
//! after a degeneracy streak, which guarantees termination.

use crate::dense::{Lu, Matrix};
use crate::model::{MilpModel, Sense};

/// Primal feasibility tolerance.
const FEAS_TOL: f64 = 1e-9;
/// Reduced-cost optimality tolerance.
const OPT_TOL: f64 = 1e-9;
/// Refactorize the basis after this many eta updates.
const REFACTOR_EVERY: usize = 40;
/// Switch to Bland's rule after this many consecutive degenerate pivots.
const DEGENERATE_STREAK: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// Iteration cap hit or numerics broke down; the answer carries no claim.
    TimeLimit,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Structural variable values (model variables only, no slacks).
    pub x: Vec<f64>,
    pub objective: f64,
    /// Equal to the objective at optimality, `−∞` otherwise.
    pub dual_bound: f64,
}

/// Solves the continuous relaxation of a model (integrality marks ignored).
pub fn solve_lp(model: &MilpModel) -> LpSolution {
    solve_lp_with_overrides(model, &[])
}

/// Like [`solve_lp`] with per-variable bound overrides applied on top.
pub fn solve_lp_with_overrides(model: &MilpModel, overrides: &[(usize, f64, f64)]) -> LpSolution {
    let n = model.num_variables();
    let m = model.num_constraints();

    let mut lb: Vec<f64> = model.variables.iter().map(|v| v.lb).collect();
    let mut ub: Vec<f64> = model.variables.iter().map(|v| v.ub).collect();
    for &(id, l, u) in overrides {
        lb[id] = lb[id].max(l);
        ub[id] = ub[id].min(u);
        if lb[id] > ub[id] {
            return LpSolution { status: LpStatus::Infeasible, x: vec![0.0; n], objective: f64::INFINITY, dual_bound: f64::NEG_INFINITY };
        }
    }

    // slack bounds by row sense
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n + m];
    let mut rhs = vec![0.0; m];
    for (r, con) in model.constraints.iter().enumerate() {
        for &(id, c) in &con.terms {
            cols[id].push((r, c));
        }
        cols[n + r].push((r, 1.0));
        rhs[r] = con.rhs;
        let (slb, sub) = match con.sense {
            Sense::Le => (0.0, f64::INFINITY),
            Sense::Ge => (f64::NEG_INFINITY, 0.0),
            Sense::Eq => (0.0, 0.0),
        };
        lb.push(slb);
        ub.push(sub);
    }
    let mut cost = vec![0.0; n + m];
    cost[..n].copy_from_slice(&model.objective);

    let mut sx = Simplex::new(cols, rhs, lb, ub, cost, n, m);
    let status = sx.run();
    let x = sx.values[..n].to_vec();
    let objective = model.objective_value(&x);
    let dual_bound = if status == LpStatus::Optimal { objective } else { f64::NEG_INFINITY };
    LpSolution { status, x, objective, dual_bound }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum ColState {
    Basic(usize),
    AtLower,
    AtUpper,
}

struct Simplex {
    cols: Vec<Vec<(usize, f64)>>,
    lb: Vec<f64>,
    ub: Vec<f64>,
    cost: Vec<f64>,
    rhs: Vec<f64>,
    n_struct: usize,
    m: usize,
    basis: Vec<usize>,
    state: Vec<ColState>,
    values: Vec<f64>,
    lu: Option<Lu>,
    etas: Vec<(usize, Vec<f64>)>,
    resets: usize,
}

impl Simplex {
    fn new(
        cols: Vec<Vec<(usize, f64)>>,
        rhs: Vec<f64>,
        lb: Vec<f64>,
        ub: Vec<f64>,
        cost: Vec<f64>,
        n_struct: usize,
        m: usize,
    ) -> Self {
        let total = cols.len();
        let mut state = Vec::with_capacity(total);
        let mut values = vec![0.0; total];
        for j in 0..total {
            if j >= n_struct {
                state.push(ColState::Basic(j - n_struct));
            } else if lb[j].is_finite() && (lb[j].abs() <= ub[j].abs() || !ub[j].is_finite()) {
                state.push(ColState::AtLower);
                values[j] = lb[j];
            } else if ub[j].is_finite() {
                state.push(ColState::AtUpper);
                values[j] = ub[j];
            } else {
                state.push(ColState::AtLower);
                values[j] = 0.0;
            }
        }
        let basis: Vec<usize> = (n_struct..total).collect();
        Simplex { cols, lb, ub, cost, rhs, n_struct, m, basis, state, values, lu: None, etas: Vec::new(), resets: 0 }
    }

    /// Refactorizes, retreating to the all-slack basis when the current one
    /// is numerically singular. `Ok(true)` means a retreat happened.
    fn refresh(&mut self) -> Result<bool, ()> {
        if self.refactor().is_ok() {
            self.recompute_basics();
            return Ok(false);
        }
        if self.resets >= 3 {
            return Err(());
        }
        self.resets += 1;
        self.reset_to_slack_basis()?;
        Ok(true)
    }

    fn refactor(&mut self) -> Result<(), ()> {
        let mut b = Matrix::zeros(self.m, self.m);
        for (pos, &j) in self.basis.iter().enumerate() {
            for &(r, c) in &self.cols[j] {
                b.set(r, pos, c);
            }
        }
        self.lu = Some(Lu::factor(&b).map_err(|_| ())?);
        self.etas.clear();
        Ok(())
    }

    /// Falls back to the all-slack basis when the current one turned
    /// singular; every structural variable returns to a bound.
    fn reset_to_slack_basis(&mut self) -> Result<(), ()> {
        for j in 0..self.cols.len() {
            if j >= self.n_struct {
                self.state[j] = ColState::Basic(j - self.n_struct);
            } else if self.lb[j].is_finite() {
                self.state[j] = ColState::AtLower;
                self.values[j] = self.lb[j];
            } else if self.ub[j].is_finite() {
                self.state[j] = ColState::AtUpper;
                self.values[j] = self.ub[j];
            } else {
                self.state[j] = ColState::AtLower;
                self.values[j] = 0.0;
            }
        }
        self.basis = (self.n_struct..self.cols.len()).collect();
        self.refactor()?;
        self.recompute_basics();
        Ok(())
    }

    fn ftran(&self, v: &[f64]) -> Vec<f64> {
        let mut y = self.lu.as_ref().unwrap().solve(v);
        for (r, w) in &self.etas {
            let yr = y[*r] / w[*r];
            for i in 0..self.m {
                if i == *r {
                    continue;
                }
                y[i] -= w[i] * yr;
            }
            y[*r] = yr;
        }
        y
    }

    fn btran(&self, c: &[f64]) -> Vec<f64> {
        let mut z = c.to_vec();
        for (r, w) in self.etas.iter().rev() {
            let mut acc = z[*r];
            for i in 0..self.m {
                if i != *r {
                    acc -= w[i] * z[i];
                }
            }
            z[*r] = acc / w[*r];
        }
        self.lu.as_ref().unwrap().solve_transpose(&z)
    }

    fn column(&self, j: usize) -> Vec<f64> {
        let mut col = vec![0.0; self.m];
        for &(r, c) in &self.cols[j] {
            col[r] = c;
        }
        col
    }

    /// Recomputes basic values from the nonbasic assignment.
    fn recompute_basics(&mut self) {
        let mut b = self.rhs.clone();
        for j in 0..self.cols.len() {
            match self.state[j] {
                ColState::Basic(_) => {}
                _ => {
                    if self.values[j] != 0.0 {
                        for &(r, c) in &self.cols[j] {
                            b[r] -= c * self.values[j];
                        }
                    }
                }
            }
        }
        let xb = self.ftran(&b);
        for (pos, &j) in self.basis.iter().enumerate() {
            self.values[j] = xb[pos];
        }
    }

    fn infeasibility(&self) -> f64 {
        self.basis
            .iter()
            .map(|&j| (self.lb[j] - self.values[j]).max(0.0) + (self.values[j] - self.ub[j]).max(0.0))
            .sum()
    }

    fn phase_cost(&self, phase1: bool) -> Vec<f64> {
        if !phase1 {
            return self.cost.clone();
        }
        let mut c = vec![0.0; self.cols.len()];
        for &j in &self.basis {
            if self.values[j] < self.lb[j] - FEAS_TOL {
                c[j] = -1.0;
            } else if self.values[j] > self.ub[j] + FEAS_TOL {
                c[j] = 1.0;
            }
        }
        c
    }

    fn run(&mut self) -> LpStatus {
        if self.m == 0 {
            // bound-only problem: every variable sits at its cheaper bound
            for j in 0..self.n_struct {
                let take_lower = self.cost[j] >= 0.0;
                let v = if take_lower { self.lb[j] } else { self.ub[j] };
                if !v.is_finite() {
                    return LpStatus::Unbounded;
                }
                self.values[j] = v;
                self.state[j] = if take_lower { ColState::AtLower } else { ColState::AtUpper };
            }
            return LpStatus::Optimal;
        }
        if self.refresh().is_err() {
            return LpStatus::TimeLimit;
        }

        let iter_cap = 2000 + 200 * self.m;
        let mut degenerate_streak = 0usize;
        let mut bland = false;
        let mut phase1 = self.infeasibility() > FEAS_TOL;
        // conclusions drawn from a drifted eta chain are re-verified against
        // a fresh factorization before they are returned
        let mut fresh = true;

        for _iter in 0..iter_cap {
            if phase1 && self.infeasibility() <= FEAS_TOL {
                phase1 = false;
                degenerate_streak = 0;
                bland = false;
            }
            let c = self.phase_cost(phase1);
            let cb: Vec<f64> = self.basis.iter().map(|&j| c[j]).collect();
            let y = self.btran(&cb);

            // pricing
            let mut entering: Option<(usize, f64, bool)> = None; // (col, score, increase)
            for j in 0..self.cols.len() {
                let (at_lower, at_upper) = match self.state[j] {
                    ColState::Basic(_) => continue,
                    ColState::AtLower => (true, false),
                    ColState::AtUpper => (false, true),
                };
                let mut d = c[j];
                for &(r, coef) in &self.cols[j] {
                    d -= y[r] * coef;
                }
                let (eligible, increase) = if at_lower {
                    (d < -OPT_TOL, true)
                } else if at_upper {
                    (d > OPT_TOL, false)
                } else {
                    (false, true)
                };
                if eligible {
                    let score = d.abs();
                    if bland {
                        entering = Some((j, score, increase));
                        break;
                    }
                    match entering {
                        Some((_, best, _)) if best >= score => {}
                        _ => entering = Some((j, score, increase)),
                    }
                }
            }

            let Some((q, _, increase)) = entering else {
                if !fresh {
                    match self.refresh() {
                        Err(()) => return LpStatus::TimeLimit,
                        Ok(reset) => {
                            if reset {
                                degenerate_streak = 0;
                                bland = false;
                            }
                            phase1 = self.infeasibility() > FEAS_TOL;
                            fresh = true;
                            continue;
                        }
                    }
                }
                if phase1 {
                    if self.infeasibility() <= FEAS_TOL {
                        // feasible now; the next pass prices the true objective
                        continue;
                    }
                    return LpStatus::Infeasible;
                }
                if self.infeasibility() > FEAS_TOL {
                    // drifted values slipped out of bounds; repair them
                    phase1 = true;
                    continue;
                }
                return LpStatus::Optimal;
            };

            // ratio test along σ·direction of x_q
            let sigma = if increase { 1.0 } else { -1.0 };
            let aq = self.column(q);
            let w = self.ftran(&aq);
            let own_range = self.ub[q] - self.lb[q];
            let mut limit = if own_range.is_finite() { own_range } else { f64::INFINITY };
            let mut leaving: Option<(usize, f64, bool)> = None; // (basis pos, bound val, to_upper)
            for (pos, &j) in self.basis.iter().enumerate() {
                let delta = -sigma * w[pos]; // dх_j per unit move of x_q
                if delta.abs() < 1e-9 {
                    continue;
                }
                let xj = self.values[j];
                // block at the first bound ahead in the direction of
                // movement; a variable already beyond its bound and moving
                // further away has nothing ahead to block on
                let (bound, to_upper) = if delta > 0.0 {
                    if xj < self.lb[j] - FEAS_TOL {
                        (self.lb[j], false)
                    } else if xj <= self.ub[j] + FEAS_TOL {
                        (self.ub[j], true)
                    } else {
                        continue;
                    }
                } else if xj > self.ub[j] + FEAS_TOL {
                    (self.ub[j], true)
                } else if xj >= self.lb[j] - FEAS_TOL {
                    (self.lb[j], false)
                } else {
                    continue;
                };
                if !bound.is_finite() {
                    continue;
                }
                let room = (bound - xj) / delta;
                if room < limit - 1e-12 {
                    limit = room.max(0.0);
                    leaving = Some((pos, bound, to_upper));
                } else if (room - limit).abs() <= 1e-12 && leaving.is_some() {
                    // deterministic tie break on smaller column index
                    let (cur_pos, ..) = leaving.unwrap();
                    if self.basis[pos] < self.basis[cur_pos] {
                        leaving = Some((pos, bound, to_upper));
                    }
                }
            }

            if !limit.is_finite() {
                if !fresh {
                    match self.refresh() {
                        Err(()) => return LpStatus::TimeLimit,
                        Ok(reset) => {
                            if reset {
                                phase1 = self.infeasibility() > FEAS_TOL;
                                degenerate_streak = 0;
                                bland = false;
                            }
                            fresh = true;
                            continue;
                        }
                    }
                }
                return if phase1 { LpStatus::TimeLimit } else { LpStatus::Unbounded };
            }
            if limit <= 1e-12 {
                degenerate_streak += 1;
                if degenerate_streak > DEGENERATE_STREAK {
                    bland = true;
                }
            } else {
                degenerate_streak = 0;
            }

            // apply the move
            let step = sigma * limit;
            self.values[q] += step;
            for (pos, &j) in self.basis.iter().enumerate() {
                self.values[j] -= step * w[pos];
            }

            match leaving {
                None => {
                    // bound flip: x_q crossed to its other bound
                    self.state[q] = if increase { ColState::AtUpper } else { ColState::AtLower };
                    self.values[q] = if increase { self.ub[q] } else { self.lb[q] };
                    fresh = false;
                }
                Some((pos, bound, _)) => {
                    let out = self.basis[pos];
                    self.values[out] = bound;
                    self.state[out] = if (bound - self.lb[out]).abs() <= (bound - self.ub[out]).abs() {
                        ColState::AtLower
                    } else {
                        ColState::AtUpper
                    };
                    self.basis[pos] = q;
                    self.state[q] = ColState::Basic(pos);
                    if w[pos].abs() < 1e-9 || self.etas.len() + 1 >= REFACTOR_EVERY {
                        match self.refresh() {
                            Err(()) => return LpStatus::TimeLimit,
                            Ok(reset) => {
                                if reset {
                                    phase1 = self.infeasibility() > FEAS_TOL;
                                    degenerate_streak = 0;
                                    bland = false;
                                }
                                fresh = true;
                            }
                        }
                    } else {
                        self.etas.push((pos, w.clone()));
                        fresh = false;
                    }
                }
            }
        }
        LpStatus::TimeLimit
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MilpModel, Sense, VarKey, VarKind};

    fn var(m: &mut MilpModel, node: usize, lb: f64, ub: f64) -> usize {
        m.add_variable(VarKey::Head { node, k: 0 }, lb, ub, VarKind::Continuous).unwrap()
    }

    #[test]
    fn minimizes_single_bounded_variable() {
        let mut m = MilpModel::new();
        let x = var(&mut m, 0, 0.0, 10.0);
        m.set_objective_coefficient(x, 1.0);
        m.add_constraint("floor", vec![(x, 1.0)], Sense::Ge, 3.0).unwrap();
        let sol = solve_lp(&m);
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.x[x] - 3.0).abs() < 1e-9);
        assert!((sol.objective - 3.0).abs() < 1e-9);
    }

    #[test]
    fn reports_infeasible_pair() {
        let mut m = MilpModel::new();
        let x = var(&mut m, 0, -10.0, 10.0);
        m.add_constraint("le", vec![(x, 1.0)], Sense::Le, 0.0).unwrap();
        m.add_constraint("ge", vec![(x, 1.0)], Sense::Ge, 1.0).unwrap();
        assert_eq!(solve_lp(&m).status, LpStatus::Infeasible);
    }

    #[test]
    fn reports_unbounded_ray() {
        let mut m = MilpModel::new();
        let x = var(&mut m, 0, 0.0, f64::INFINITY);
        let y = var(&mut m, 1, 0.0, f64::INFINITY);
        m.set_objective_coefficient(x, -1.0);
        m.add_constraint("tie", vec![(x, 1.0), (y, -1.0)], Sense::Le, 1.0).unwrap();
        assert_eq!(solve_lp(&m).status, LpStatus::Unbounded);
    }

    #[test]
    fn solves_textbook_lp() {
        // min −3x − 5y st x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18 → (2, 6), obj −36
        let mut m = MilpModel::new();
        let x = var(&mut m, 0, 0.0, f64::INFINITY);
        let y = var(&mut m, 1, 0.0, f64::INFINITY);
        m.set_objective_coefficient(x, -3.0);
        m.set_objective_coefficient(y, -5.0);
        m.add_constraint("c1", vec![(x, 1.0)], Sense::Le, 4.0).unwrap();
        m.add_constraint("c2", vec![(y, 2.0)], Sense::Le, 12.0).unwrap();
        m.add_constraint("c3", vec![(x, 3.0), (y, 2.0)], Sense::Le, 18.0).unwrap();
        let sol = solve_lp(&m);
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective + 36.0).abs() < 1e-8, "obj {}", sol.objective);
        assert!((sol.x[x] - 2.0).abs() < 1e-8);
        assert!((sol.x[y] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn respects_upper_bounds_via_flips() {
        // min −x − y st x + y ≤ 1.5, boxes [0,1]
        let mut m = MilpModel::new();
        let x = var(&mut m, 0, 0.0, 1.0);
        let y = var(&mut m, 1, 0.0, 1.0);
        m.set_objective_coefficient(x, -1.0);
        m.set_objective_coefficient(y, -1.0);
        m.add_constraint("cap", vec![(x, 1.0), (y, 1.0)], Sense::Le, 1.5).unwrap();
        let sol = solve_lp(&m);
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective + 1.5).abs() < 1e-9);
    }

    #[test]
    fn equality_rows_and_negative_bounds() {
        // min x + y st x + y = −2, x ∈ [−3, 0], y ∈ [−3, 0] → obj −2
        let mut m = MilpModel::new();
        let x = var(&mut m, 0, -3.0, 0.0);
        let y = var(&mut m, 1, -3.0, 0.0);
        m.set_objective_coefficient(x, 1.0);
        m.set_objective_coefficient(y, 2.0);
        m.add_constraint("eq", vec![(x, 1.0), (y, 1.0)], Sense::Eq, -2.0).unwrap();
        let sol = solve_lp(&m);
        assert_eq!(sol.status, LpStatus::Optimal);
        // cheapest: y at its lower... minimizing x + 2y pushes y down to −2
        assert!((sol.objective - (0.0 + 2.0 * -2.0)).abs() < 1e-9, "obj {}", sol.objective);
    }

    #[test]
    fn hand_solved_pipe_relaxation_lp() {
        // Two outer cuts of a loss curve with a fixed flow:
        //   min Δh  st  Δh ≥ 0.3·q − 0.02,  Δh ≥ 0.8·q − 0.27,  q = 0.5
        // → Δh = max(0.13, 0.13) = 0.13
        let mut m = MilpModel::new();
        let q = var(&mut m, 0, 0.0, 1.0);
        let dh = var(&mut m, 1, 0.0, 10.0);
        m.set_objective_coefficient(dh, 1.0);
        m.add_constraint("cut1", vec![(dh, 1.0), (q, -0.3)], Sense::Ge, -0.02).unwrap();
        m.add_constraint("cut2", vec![(dh, 1.0), (q, -0.8)], Sense::Ge, -0.27).unwrap();
        m.add_constraint("fix", vec![(q, 1.0)], Sense::Eq, 0.5).unwrap();
        let sol = solve_lp(&m);
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective - 0.13).abs() < 1e-9, "obj {}", sol.objective);
    }
}

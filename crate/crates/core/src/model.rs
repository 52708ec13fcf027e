//! Solver-agnostic linear model: bounded variables with integrality marks and
//! branch priorities, sparse linear constraints, a linear objective, and a
//! registry mapping semantic keys to variable ids.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of a variable within one [`MilpModel`].
pub type VarId = usize;

/// Direction of flow along a link, used to index directed quantities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dir {
    Pos,
    Neg,
}

impl Dir {
    pub const BOTH: [Dir; 2] = [Dir::Pos, Dir::Neg];
}

/// Semantic registry key of a decision variable.
///
/// Node/link fields are indices into the instance; `k` is the 0-based time
/// index. Heads and volumes at tanks extend one index past the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VarKey {
    /// Hydraulic head `h` at a node.
    Head { node: usize, k: usize },
    /// Signed flow `q` on a link.
    Flow { link: usize, k: usize },
    /// Directed nonnegative flow `q±`.
    DirFlow { link: usize, k: usize, dir: Dir },
    /// Flow direction indicator `y`.
    Direction { link: usize, k: usize },
    /// Pump or valve status `z`.
    Status { link: usize, k: usize },
    /// Pump head gain `g`.
    Gain { link: usize, k: usize },
    /// Directed head difference `Δh±` on a pipe.
    DeltaHead { link: usize, k: usize, dir: Dir },
    /// Tank volume `v`; `k` ranges one past the horizon.
    Volume { node: usize, k: usize },
    /// Net tank outflow.
    TankFlow { node: usize, k: usize },
    /// Switch-on indicator.
    SwitchOn { link: usize, k: usize },
    /// Switch-off indicator.
    SwitchOff { link: usize, k: usize },
    /// Piecewise convex-combination weight λ at breakpoint `p`.
    ConvexWeight { link: usize, k: usize, dir: Dir, p: usize },
    /// Piecewise interval activation x for the interval ending at breakpoint `p`.
    IntervalActive { link: usize, k: usize, dir: Dir, p: usize },
    /// McCormick product `w ≈ q·h` at a tank.
    TankProduct { node: usize, k: usize },
    /// Epigraph variable for a pipe's directed loss work term.
    PipeWorkEpi { link: usize, k: usize, dir: Dir },
    /// Epigraph variable for a pump's work term.
    PumpWorkEpi { link: usize, k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Variable {
    pub key: VarKey,
    pub lb: f64,
    pub ub: f64,
    pub kind: VarKind,
    /// Larger values are branched first; 0 is the default class.
    pub branch_priority: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

/// One sparse linear constraint `Σ coef·var {≤,=,≥} rhs`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Constraint {
    pub terms: Vec<(VarId, f64)>,
    pub sense: Sense,
    pub rhs: f64,
    /// Short origin label carried into LP exports.
    pub label: String,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("variable key {0:?} registered twice")]
    DuplicateKey(VarKey),
    #[error("bounds crossed for {key:?}: [{lb}, {ub}]")]
    CrossedBounds { key: VarKey, lb: f64, ub: f64 },
    #[error("unknown variable key {0:?}")]
    UnknownKey(VarKey),
    #[error("constraint `{0}` references unregistered variable {1}")]
    BadReference(String, VarId),
}

/// A finalized (or under-construction) mixed-integer linear model.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MilpModel {
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    /// Dense objective coefficients, one per variable.
    pub objective: Vec<f64>,
    pub objective_constant: f64,
    registry: BTreeMap<VarKey, VarId>,
}

impl MilpModel {
    pub fn new() -> Self {
        MilpModel::default()
    }

    pub fn add_variable(
        &mut self,
        key: VarKey,
        lb: f64,
        ub: f64,
        kind: VarKind,
    ) -> Result<VarId, ModelError> {
        if lb > ub {
            return Err(ModelError::CrossedBounds { key, lb, ub });
        }
        if self.registry.contains_key(&key) {
            return Err(ModelError::DuplicateKey(key));
        }
        let id = self.variables.len();
        self.variables.push(Variable { key, lb, ub, kind, branch_priority: 0 });
        self.objective.push(0.0);
        self.registry.insert(key, id);
        Ok(id)
    }

    pub fn var(&self, key: VarKey) -> Result<VarId, ModelError> {
        self.registry.get(&key).copied().ok_or(ModelError::UnknownKey(key))
    }

    pub fn lookup(&self, key: VarKey) -> Option<VarId> {
        self.registry.get(&key).copied()
    }

    pub fn key_of(&self, id: VarId) -> VarKey {
        self.variables[id].key
    }

    pub fn registry(&self) -> &BTreeMap<VarKey, VarId> {
        &self.registry
    }

    pub fn add_constraint(
        &mut self,
        label: impl Into<String>,
        terms: Vec<(VarId, f64)>,
        sense: Sense,
        rhs: f64,
    ) -> Result<usize, ModelError> {
        let label = label.into();
        for &(id, _) in &terms {
            if id >= self.variables.len() {
                return Err(ModelError::BadReference(label, id));
            }
        }
        // merge duplicate ids so downstream consumers see clean rows
        let mut merged: BTreeMap<VarId, f64> = BTreeMap::new();
        for (id, c) in terms {
            *merged.entry(id).or_insert(0.0) += c;
        }
        let terms: Vec<(VarId, f64)> = merged.into_iter().filter(|&(_, c)| c != 0.0).collect();
        self.constraints.push(Constraint { terms, sense, rhs, label });
        Ok(self.constraints.len() - 1)
    }

    pub fn set_objective_coefficient(&mut self, id: VarId, coef: f64) {
        self.objective[id] = coef;
    }

    pub fn add_objective_coefficient(&mut self, id: VarId, coef: f64) {
        self.objective[id] += coef;
    }

    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn binary_ids(&self) -> Vec<VarId> {
        (0..self.variables.len()).filter(|&i| self.variables[i].kind == VarKind::Binary).collect()
    }

    /// Relaxes every integrality mark in place.
    pub fn relax_integrality(&mut self) {
        for v in &mut self.variables {
            v.kind = VarKind::Continuous;
        }
    }

    /// Evaluates the objective at a point.
    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective_constant
            + self.objective.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    /// Largest constraint violation of a point, for diagnostics and tests.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for con in &self.constraints {
            let lhs: f64 = con.terms.iter().map(|&(id, c)| c * x[id]).sum();
            let viol = match con.sense {
                Sense::Le => lhs - con.rhs,
                Sense::Ge => con.rhs - lhs,
                Sense::Eq => (lhs - con.rhs).abs(),
            };
            worst = worst.max(viol);
        }
        for (i, v) in self.variables.iter().enumerate() {
            worst = worst.max(v.lb - x[i]).max(x[i] - v.ub);
        }
        worst
    }

    /// Human-readable variable name used in LP exports.
    pub fn var_name(&self, id: VarId) -> String {
        name_of(self.variables[id].key)
    }

    /// Renders the model in LP file syntax; comment lines carry labels.
    pub fn to_lp_format(&self) -> String {
        let mut out = String::new();
        out.push_str("\\ exported linear model\n");
        out.push_str("Minimize\n obj:");
        let mut first = true;
        for (i, &c) in self.objective.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let _ = write!(out, " {} {} {}", if c < 0.0 { "-" } else if first { "" } else { "+" }, fmt_coef(c.abs()), self.var_name(i));
            first = false;
        }
        if first {
            out.push_str(" 0 ");
            out.push_str(&self.var_name(0));
        }
        out.push('\n');
        out.push_str("Subject To\n");
        for (n, con) in self.constraints.iter().enumerate() {
            let _ = write!(out, "\\ {}\n c{}:", con.label, n);
            let mut first = true;
            for &(id, c) in &con.terms {
                let _ = write!(out, " {} {} {}", if c < 0.0 { "-" } else if first { "" } else { "+" }, fmt_coef(c.abs()), self.var_name(id));
                first = false;
            }
            if first {
                out.push_str(" 0 x0");
            }
            let op = match con.sense {
                Sense::Le => "<=",
                Sense::Ge => ">=",
                Sense::Eq => "=",
            };
            let _ = writeln!(out, " {} {}", op, fmt_coef(con.rhs));
        }
        out.push_str("Bounds\n");
        for (i, v) in self.variables.iter().enumerate() {
            let _ = writeln!(out, " {} <= {} <= {}", fmt_coef(v.lb), self.var_name(i), fmt_coef(v.ub));
        }
        let binaries = self.binary_ids();
        if !binaries.is_empty() {
            out.push_str("Binary\n");
            for id in binaries {
                let _ = writeln!(out, " {}", self.var_name(id));
            }
        }
        out.push_str("End\n");
        out
    }
}

fn fmt_coef(c: f64) -> String {
    if c == c.trunc() && c.abs() < 1e15 {
        format!("{}", c as i64)
    } else {
        format!("{c:.12e}")
    }
}

fn name_of(key: VarKey) -> String {
    match key {
        VarKey::Head { node, k } => format!("h_n{node}_t{k}"),
        VarKey::Flow { link, k } => format!("q_l{link}_t{k}"),
        VarKey::DirFlow { link, k, dir } => format!("q{}_l{link}_t{k}", dir_tag(dir)),
        VarKey::Direction { link, k } => format!("y_l{link}_t{k}"),
        VarKey::Status { link, k } => format!("z_l{link}_t{k}"),
        VarKey::Gain { link, k } => format!("g_l{link}_t{k}"),
        VarKey::DeltaHead { link, k, dir } => format!("dh{}_l{link}_t{k}", dir_tag(dir)),
        VarKey::Volume { node, k } => format!("v_n{node}_t{k}"),
        VarKey::TankFlow { node, k } => format!("qt_n{node}_t{k}"),
        VarKey::SwitchOn { link, k } => format!("zon_l{link}_t{k}"),
        VarKey::SwitchOff { link, k } => format!("zoff_l{link}_t{k}"),
        VarKey::ConvexWeight { link, k, dir, p } => format!("lam{}_l{link}_t{k}_p{p}", dir_tag(dir)),
        VarKey::IntervalActive { link, k, dir, p } => format!("x{}_l{link}_t{k}_p{p}", dir_tag(dir)),
        VarKey::TankProduct { node, k } => format!("w_n{node}_t{k}"),
        VarKey::PipeWorkEpi { link, k, dir } => format!("phi{}_l{link}_t{k}", dir_tag(dir)),
        VarKey::PumpWorkEpi { link, k } => format!("psi_l{link}_t{k}"),
    }
}

fn dir_tag(dir: Dir) -> &'static str {
    match dir {
        Dir::Pos => "p",
        Dir::Neg => "m",
    }
}

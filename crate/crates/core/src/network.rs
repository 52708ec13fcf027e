//! Immutable domain model of a water distribution network and its
//! time-expanded scheduling instance, with structural validation.
//!
//! All quantities are SI: heads and elevations in meters, flows in m³/s,
//! durations in seconds. Pump cost coefficients are stored pre-multiplied so
//! the objective is in currency units directly.

use std::collections::HashMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of a node within [`Instance::nodes`].
pub type NodeIdx = usize;
/// Index of a link within [`Instance::links`].
pub type LinkIdx = usize;

/// Smoothed Hazen-Williams exponent default.
pub const DEFAULT_LOSS_EXPONENT: f64 = 1.852;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("unknown node id `{0}`")]
    UnknownNode(String),
    #[error("head {head} m is below tank bottom {bottom} m")]
    HeadBelowBottom { head: f64, bottom: f64 },
    #[error("negative volume {0} m^3")]
    NegativeVolume(f64),
}

/// Node payload for a demand (or pass-through junction when every rate is zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demand {
    /// Signed demanded flow rate per step; negative values are consumption,
    /// positive values are injection.
    pub rate: Vec<f64>,
}

/// Node payload for a cylindrical storage tank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tank {
    /// Tank diameter in meters.
    pub diameter: f64,
    /// Elevation of the tank bottom in meters.
    pub bottom: f64,
    /// Fixed initial volume in m³.
    pub initial_volume: f64,
    /// Lower bound on the tank's net outflow per step (m³/s; negative = filling).
    pub flow_lb: Vec<f64>,
    /// Upper bound on the tank's net outflow per step.
    pub flow_ub: Vec<f64>,
}

impl Tank {
    /// Cross-sectional area (π/4)·D².
    pub fn area(&self) -> f64 {
        0.25 * PI * self.diameter * self.diameter
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NodeKind {
    Demand(Demand),
    Reservoir,
    Tank(Tank),
}

/// A network node with per-step head bounds.
///
/// Head bounds have length `K` for demands and reservoirs and `K + 1` for
/// tanks, whose final level is constrained one index past the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
    pub head_lb: Vec<f64>,
    pub head_ub: Vec<f64>,
}

impl Node {
    pub fn is_tank(&self) -> bool {
        matches!(self.kind, NodeKind::Tank(_))
    }
    pub fn is_reservoir(&self) -> bool {
        matches!(self.kind, NodeKind::Reservoir)
    }
    pub fn as_tank(&self) -> Option<&Tank> {
        match &self.kind {
            NodeKind::Tank(t) => Some(t),
            _ => None,
        }
    }
    pub fn as_demand(&self) -> Option<&Demand> {
        match &self.kind {
            NodeKind::Demand(d) => Some(d),
            _ => None,
        }
    }
}

/// Link payload for a pipe obeying the Hazen-Williams head loss law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipe {
    /// Length in meters.
    pub length: f64,
    /// Resistance per unit length.
    pub resistance: f64,
    /// Loss exponent, 1.852 for Hazen-Williams.
    pub exponent: f64,
}

/// Link payload for a fixed-speed pump.
///
/// The head gain of an active pump is `a + b·q^c` with `a > 0`, `b < 0`,
/// `c > 0`. Cost coefficients fold power modeling and electricity price, so
/// the objective contribution is `energy_cost[k]·q + activation_cost[k]·z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pump {
    pub gain_a: f64,
    pub gain_b: f64,
    pub gain_c: f64,
    /// Flow cost coefficient λ per step.
    pub energy_cost: Vec<f64>,
    /// Activation cost coefficient μ per step.
    pub activation_cost: Vec<f64>,
    /// Minimum time the pump must stay on after switching on, in seconds.
    pub min_on_secs: f64,
    /// Minimum time the pump must stay off after switching off, in seconds.
    pub min_off_secs: f64,
    /// Maximum number of on-switches over the horizon.
    pub max_starts: u32,
    /// Optional tag marking interchangeable parallel pumps.
    pub symmetry_group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LinkKind {
    Pipe(Pipe),
    Pump(Pump),
    Valve,
}

/// A directed node-connecting component.
///
/// `flow_lb`/`flow_ub` bound the signed flow per step. Directed bounds are
/// derived: `q̄⁺ = max(0, q̄)`, `q̄⁻ = max(0, −q̲)`, while the nonnegative
/// directed lower bounds start at `dir_flow_lb` (conservatively zero; for
/// pumps these are the minimum active flows of the disjunctive bounds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: String,
    pub tail: NodeIdx,
    pub head: NodeIdx,
    pub kind: LinkKind,
    pub flow_lb: Vec<f64>,
    pub flow_ub: Vec<f64>,
    /// Directed lower bound on positive-direction flow per step.
    pub dir_flow_lb_pos: Vec<f64>,
    /// Directed lower bound on negative-direction flow per step.
    pub dir_flow_lb_neg: Vec<f64>,
}

impl Link {
    pub fn is_pipe(&self) -> bool {
        matches!(self.kind, LinkKind::Pipe(_))
    }
    pub fn is_pump(&self) -> bool {
        matches!(self.kind, LinkKind::Pump(_))
    }
    pub fn is_valve(&self) -> bool {
        matches!(self.kind, LinkKind::Valve)
    }
    pub fn is_controllable(&self) -> bool {
        self.is_pump() || self.is_valve()
    }
    pub fn as_pipe(&self) -> Option<&Pipe> {
        match &self.kind {
            LinkKind::Pipe(p) => Some(p),
            _ => None,
        }
    }
    pub fn as_pump(&self) -> Option<&Pump> {
        match &self.kind {
            LinkKind::Pump(p) => Some(p),
            _ => None,
        }
    }
    /// Derived directed upper bound `max(0, q̄)` at step `k`.
    pub fn dir_flow_ub_pos(&self, k: usize) -> f64 {
        self.flow_ub[k].max(0.0)
    }
    /// Derived directed upper bound `max(0, −q̲)` at step `k`.
    pub fn dir_flow_ub_neg(&self, k: usize) -> f64 {
        (-self.flow_lb[k]).max(0.0)
    }
}

/// A time-expanded scheduling instance: the network plus the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub nodes: Vec<Node>,
    pub links: Vec<Link>,
    /// Step durations Δt in seconds, length `K`.
    pub dt: Vec<f64>,
}

impl Instance {
    /// Number of time steps `K`.
    pub fn horizon(&self) -> usize {
        self.dt.len()
    }

    /// Time stamps `t(k)` for `k = 0..=K`, with `t(0) = 0`.
    pub fn time_stamps(&self) -> Vec<f64> {
        let mut t = Vec::with_capacity(self.dt.len() + 1);
        t.push(0.0);
        for &d in &self.dt {
            t.push(t.last().unwrap() + d);
        }
        t
    }

    pub fn node_index(&self, id: &str) -> Result<NodeIdx, NetworkError> {
        self.nodes
            .iter()
            .position(|n| n.id == id)
            .ok_or_else(|| NetworkError::UnknownNode(id.to_string()))
    }

    pub fn link_index(&self, id: &str) -> Option<LinkIdx> {
        self.links.iter().position(|l| l.id == id)
    }

    /// Outgoing (tail = node) and incoming (head = node) link indices.
    pub fn incidence(&self, node: NodeIdx) -> (Vec<LinkIdx>, Vec<LinkIdx>) {
        let mut out = Vec::new();
        let mut inc = Vec::new();
        for (i, l) in self.links.iter().enumerate() {
            if l.tail == node {
                out.push(i);
            }
            if l.head == node {
                inc.push(i);
            }
        }
        (out, inc)
    }

    /// Like [`Instance::incidence`] but addressed by node id.
    pub fn incidence_by_id(&self, id: &str) -> Result<(Vec<LinkIdx>, Vec<LinkIdx>), NetworkError> {
        Ok(self.incidence(self.node_index(id)?))
    }

    pub fn pump_indices(&self) -> Vec<LinkIdx> {
        (0..self.links.len()).filter(|&l| self.links[l].is_pump()).collect()
    }

    pub fn controllable_indices(&self) -> Vec<LinkIdx> {
        (0..self.links.len()).filter(|&l| self.links[l].is_controllable()).collect()
    }

    pub fn tank_indices(&self) -> Vec<NodeIdx> {
        (0..self.nodes.len()).filter(|&n| self.nodes[n].is_tank()).collect()
    }

    /// Groups of interchangeable parallel pumps, each sorted by id and with
    /// singleton groups omitted. Pumps group together when they share
    /// endpoints, gain curve, and flow bounds.
    pub fn pump_groups(&self) -> Vec<Vec<LinkIdx>> {
        let mut buckets: Vec<(LinkIdx, Vec<LinkIdx>)> = Vec::new();
        for l in self.pump_indices() {
            let mut placed = false;
            for (rep, members) in buckets.iter_mut() {
                if self.pumps_identical(*rep, l) {
                    members.push(l);
                    placed = true;
                    break;
                }
            }
            if !placed {
                buckets.push((l, vec![l]));
            }
        }
        let mut groups: Vec<Vec<LinkIdx>> = buckets
            .into_iter()
            .map(|(_, mut members)| {
                members.sort_by(|&a, &b| self.links[a].id.cmp(&self.links[b].id));
                members
            })
            .filter(|members| members.len() > 1)
            .collect();
        groups.sort_by(|a, b| self.links[a[0]].id.cmp(&self.links[b[0]].id));
        groups
    }

    fn pumps_identical(&self, a: LinkIdx, b: LinkIdx) -> bool {
        let (la, lb) = (&self.links[a], &self.links[b]);
        if la.tail != lb.tail || la.head != lb.head {
            return false;
        }
        match (&la.kind, &lb.kind) {
            (LinkKind::Pump(pa), LinkKind::Pump(pb)) => {
                pa.gain_a == pb.gain_a
                    && pa.gain_b == pb.gain_b
                    && pa.gain_c == pb.gain_c
                    && la.flow_lb == lb.flow_lb
                    && la.flow_ub == lb.flow_ub
                    && la.dir_flow_lb_pos == lb.dir_flow_lb_pos
            }
            _ => false,
        }
    }

    /// Structural validation. Violations are data, not faults: an instance
    /// that fails validation is simply reported, entity by entity.
    pub fn validate(&self) -> ValidationReport {
        let mut v = Vec::new();
        let k = self.horizon();

        if self.dt.is_empty() {
            v.push(violation("instance", "horizon must contain at least one step"));
        }
        for (i, &d) in self.dt.iter().enumerate() {
            if !(d > 0.0) {
                v.push(violation("instance", format!("step duration dt[{i}] = {d} must be positive")));
            }
        }

        let mut seen = HashMap::new();
        for n in &self.nodes {
            if seen.insert(n.id.clone(), ()).is_some() {
                v.push(violation(&n.id, "duplicate node id"));
            }
        }
        let mut seen = HashMap::new();
        for l in &self.links {
            if seen.insert(l.id.clone(), ()).is_some() {
                v.push(violation(&l.id, "duplicate link id"));
            }
        }

        for n in &self.nodes {
            let want = if n.is_tank() { k + 1 } else { k };
            if n.head_lb.len() != want || n.head_ub.len() != want {
                v.push(violation(
                    &n.id,
                    format!("head bounds must have length {want}, got {}/{}", n.head_lb.len(), n.head_ub.len()),
                ));
                continue;
            }
            for i in 0..want {
                if n.head_lb[i] > n.head_ub[i] {
                    v.push(violation(&n.id, format!("head bounds crossed at step {i}")));
                }
            }
            match &n.kind {
                NodeKind::Reservoir => {
                    for i in 0..want {
                        if n.head_lb[i] != n.head_ub[i] {
                            v.push(violation(&n.id, format!("reservoir head must be fixed at step {i}")));
                        }
                    }
                }
                NodeKind::Demand(d) => {
                    if d.rate.len() != k {
                        v.push(violation(&n.id, format!("demand rate must have length {k}, got {}", d.rate.len())));
                    }
                }
                NodeKind::Tank(t) => {
                    if !(t.diameter > 0.0) {
                        v.push(violation(&n.id, "tank diameter must be positive"));
                    }
                    for i in 0..want {
                        if t.bottom > n.head_lb[i] {
                            v.push(violation(&n.id, format!("tank bottom above minimum head at step {i}")));
                        }
                    }
                    if t.flow_lb.len() != k || t.flow_ub.len() != k {
                        v.push(violation(&n.id, format!("tank flow bounds must have length {k}")));
                    }
                    if t.diameter > 0.0 && !n.head_lb.is_empty() {
                        let vmin = tank_volume_unchecked(t, n.head_lb[0]);
                        let vmax = tank_volume_unchecked(t, n.head_ub[0]);
                        if t.initial_volume < vmin - 1e-9 || t.initial_volume > vmax + 1e-9 {
                            v.push(violation(
                                &n.id,
                                format!("initial volume {} outside [{vmin}, {vmax}]", t.initial_volume),
                            ));
                        }
                    }
                }
            }
        }

        for l in &self.links {
            if l.tail >= self.nodes.len() {
                v.push(violation(&l.id, format!("tail node index {} missing", l.tail)));
            }
            if l.head >= self.nodes.len() {
                v.push(violation(&l.id, format!("head node index {} missing", l.head)));
            }
            if l.flow_lb.len() != k || l.flow_ub.len() != k {
                v.push(violation(&l.id, format!("flow bounds must have length {k}")));
            } else {
                for i in 0..k {
                    if l.flow_lb[i] > l.flow_ub[i] {
                        v.push(violation(&l.id, format!("flow bounds crossed at step {i}")));
                    }
                }
            }
            if l.dir_flow_lb_pos.len() != k || l.dir_flow_lb_neg.len() != k {
                v.push(violation(&l.id, format!("directed flow bounds must have length {k}")));
            } else {
                for i in 0..k {
                    if l.dir_flow_lb_pos[i] < 0.0 || l.dir_flow_lb_neg[i] < 0.0 {
                        v.push(violation(&l.id, format!("directed lower flow bound negative at step {i}")));
                    }
                }
            }
            match &l.kind {
                LinkKind::Pipe(p) => {
                    if !(p.length > 0.0) {
                        v.push(violation(&l.id, "pipe length must be positive"));
                    }
                    if !(p.resistance > 0.0) {
                        v.push(violation(&l.id, "pipe resistance must be positive"));
                    }
                    if !(p.exponent > 1.0) {
                        v.push(violation(&l.id, "pipe loss exponent must exceed 1"));
                    }
                }
                LinkKind::Pump(p) => {
                    if !(p.gain_a > 0.0) {
                        v.push(violation(&l.id, "pump a must be positive"));
                    }
                    if !(p.gain_b < 0.0) {
                        v.push(violation(&l.id, "pump b must be negative"));
                    }
                    if !(p.gain_c > 0.0) {
                        v.push(violation(&l.id, "pump c must be positive"));
                    }
                    if l.flow_lb.iter().any(|&q| q != 0.0) {
                        v.push(violation(&l.id, "pump flow lower bound must be zero (unidirectional)"));
                    }
                    for i in 0..k.min(l.flow_ub.len()) {
                        let qmax = l.dir_flow_ub_pos(i);
                        if p.gain_a + p.gain_b * qmax.powf(p.gain_c) < -1e-9 {
                            v.push(violation(&l.id, format!("pump gain negative at maximum flow, step {i}")));
                        }
                    }
                    if p.energy_cost.len() != k || p.activation_cost.len() != k {
                        v.push(violation(&l.id, format!("pump cost coefficients must have length {k}")));
                    }
                    if p.min_on_secs < 0.0 || p.min_off_secs < 0.0 {
                        v.push(violation(&l.id, "pump switching durations must be nonnegative"));
                    }
                }
                LinkKind::Valve => {}
            }
        }

        ValidationReport { violations: v }
    }
}

fn violation(entity: &str, message: impl Into<String>) -> Violation {
    Violation { entity: entity.to_string(), message: message.into() }
}

/// One violated structural invariant, attributed to an entity id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub entity: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.entity, self.message)
    }
}

/// Outcome of structural validation.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

fn tank_volume_unchecked(tank: &Tank, head: f64) -> f64 {
    tank.area() * (head - tank.bottom)
}

/// Volume of water stored at a given head: `(π/4)·D²·(head − bottom)`.
pub fn tank_volume(tank: &Tank, head: f64) -> Result<f64, NetworkError> {
    if head < tank.bottom {
        return Err(NetworkError::HeadBelowBottom { head, bottom: tank.bottom });
    }
    Ok(tank_volume_unchecked(tank, head))
}

/// Head at which the tank stores the given volume; inverse of [`tank_volume`].
pub fn tank_head(tank: &Tank, volume: f64) -> Result<f64, NetworkError> {
    if volume < 0.0 {
        return Err(NetworkError::NegativeVolume(volume));
    }
    Ok(tank.bottom + volume / tank.area())
}

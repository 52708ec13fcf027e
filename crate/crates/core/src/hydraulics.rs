//! Exact nonlinear physics: component evaluators, convex steady-state network
//! analysis, extended-period simulation, and the feasibility oracle used by
//! branch and bound.
//!
//! The steady-state solver runs damped Newton on the optimality system of the
//! convex single-step network analysis problem, treating reservoirs and tanks
//! as fixed-head boundary nodes. Head loss and head gain laws are strictly
//! increasing head-difference functions of flow; below `Q_EPS` they are
//! replaced by a value-continuous linear segment so the Jacobian stays bounded
//! away from singularity.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::dense::{Lu, Matrix};
use crate::network::{Instance, LinkIdx, LinkKind, NodeIdx, NodeKind, Pipe, Pump};

/// Flow regularization threshold (m³/s) below which loss laws are linearized.
pub const Q_EPS: f64 = 1e-6;
/// Newton convergence threshold on the residual infinity norm.
pub const RESIDUAL_TOL: f64 = 1e-10;
/// Iteration cap for one steady-state solve.
pub const MAX_NEWTON_ITERS: usize = 100;
/// Tolerance used when checking simulated trajectories against bounds.
pub const BOUND_TOL: f64 = 1e-9;

/// Linear pseudo-resistance of an open valve. Keeps the Newton system
/// nonsingular while holding `|h_i − h_j|` far below physical tolerances.
const VALVE_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum HydraulicsError {
    #[error("demand node `{0}` is disconnected from every source")]
    DisconnectedDemand(String),
    #[error("steady state did not converge (residual {0:.3e})")]
    NonConvergence(f64),
    #[error("active pump `{0}` would need reverse flow")]
    NegativePumpFlowRequired(String),
    #[error("missing tank head for `{0}`")]
    MissingTankHead(String),
    #[error("control state missing status for `{0}`")]
    MissingControl(String),
    #[error("pump is off but flow is {0}")]
    PumpOffWithFlow(f64),
    #[error("negative directed flow {0}")]
    NegativeDirectedFlow(f64),
    #[error("active valve with unequal heads (difference {0:.3e} m)")]
    ValveHeadsUnequal(f64),
    #[error("active pump implies negative gain {0:.3e} m")]
    NegativeImpliedGain(f64),
    #[error("time step {k} out of range")]
    StepOutOfRange { k: usize },
}

/// Head loss across a pipe at signed flow `q`: `L·r·q·|q|^(α−1)`.
pub fn pipe_head_loss(pipe: &Pipe, q: f64) -> f64 {
    pipe.length * pipe.resistance * q * q.abs().powf(pipe.exponent - 1.0)
}

/// Analytic derivative of [`pipe_head_loss`]: `α·L·r·|q|^(α−1)`.
pub fn pipe_head_loss_derivative(pipe: &Pipe, q: f64) -> f64 {
    pipe.exponent * pipe.length * pipe.resistance * q.abs().powf(pipe.exponent - 1.0)
}

/// Head gain of a pump at flow `q` with status `z`: `a·z + b·q^c`.
///
/// An off pump must carry zero flow.
pub fn pump_head_gain(pump: &Pump, q: f64, z: bool) -> Result<f64, HydraulicsError> {
    if !z {
        if q != 0.0 {
            return Err(HydraulicsError::PumpOffWithFlow(q));
        }
        return Ok(0.0);
    }
    Ok(pump.gain_a + pump.gain_b * q.powf(pump.gain_c))
}

/// Statuses of all pumps and valves at one time index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControlState {
    status: BTreeMap<LinkIdx, bool>,
}

impl ControlState {
    /// Builds a state covering exactly the controllable links of `instance`.
    pub fn new(instance: &Instance, status: BTreeMap<LinkIdx, bool>) -> Result<Self, HydraulicsError> {
        for l in instance.controllable_indices() {
            if !status.contains_key(&l) {
                return Err(HydraulicsError::MissingControl(instance.links[l].id.clone()));
            }
        }
        let filtered: BTreeMap<LinkIdx, bool> = status
            .into_iter()
            .filter(|(l, _)| instance.links[*l].is_controllable())
            .collect();
        Ok(ControlState { status: filtered })
    }

    pub fn uniform(instance: &Instance, on: bool) -> Self {
        ControlState {
            status: instance.controllable_indices().into_iter().map(|l| (l, on)).collect(),
        }
    }

    /// Whether a link participates in the step's active subnetwork.
    pub fn is_active(&self, instance: &Instance, link: LinkIdx) -> bool {
        if instance.links[link].is_controllable() {
            *self.status.get(&link).unwrap_or(&false)
        } else {
            true
        }
    }

    pub fn status(&self, link: LinkIdx) -> Option<bool> {
        self.status.get(&link).copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = (LinkIdx, bool)> + '_ {
        self.status.iter().map(|(&l, &z)| (l, z))
    }
}

/// Pump/valve statuses for every step of the horizon.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    pub steps: Vec<ControlState>,
}

impl Schedule {
    pub fn uniform(instance: &Instance, on: bool) -> Self {
        Schedule {
            steps: (0..instance.horizon()).map(|_| ControlState::uniform(instance, on)).collect(),
        }
    }

    /// Builds a schedule from per-link status vectors keyed by link id.
    pub fn from_status_map(
        instance: &Instance,
        map: &BTreeMap<String, Vec<bool>>,
    ) -> Result<Self, HydraulicsError> {
        let horizon = instance.horizon();
        let mut steps = Vec::with_capacity(horizon);
        for k in 0..horizon {
            let mut status = BTreeMap::new();
            for l in instance.controllable_indices() {
                let id = &instance.links[l].id;
                let bits = map
                    .get(id)
                    .ok_or_else(|| HydraulicsError::MissingControl(id.clone()))?;
                if bits.len() != horizon {
                    return Err(HydraulicsError::MissingControl(id.clone()));
                }
                status.insert(l, bits[k]);
            }
            steps.push(ControlState::new(instance, status)?);
        }
        Ok(Schedule { steps })
    }

    pub fn to_status_map(&self, instance: &Instance) -> BTreeMap<String, Vec<bool>> {
        let mut map = BTreeMap::new();
        for l in instance.controllable_indices() {
            let bits: Vec<bool> =
                self.steps.iter().map(|s| s.status(l).unwrap_or(false)).collect();
            map.insert(instance.links[l].id.clone(), bits);
        }
        map
    }
}

/// Converged single-step network state.
#[derive(Debug, Clone)]
pub struct SteadyState {
    /// Signed flow per link; zero on inactive links.
    pub flows: Vec<f64>,
    /// Head per node.
    pub heads: Vec<f64>,
    /// Largest flow-balance residual over demand nodes (m³/s).
    pub max_balance_residual: f64,
    /// Largest head-law residual over active links (m).
    pub max_law_residual: f64,
}

impl SteadyState {
    /// Net outflow `Σ δ⁺ q − Σ δ⁻ q` at a node.
    pub fn net_outflow(&self, instance: &Instance, node: NodeIdx) -> f64 {
        let mut acc = 0.0;
        for (l, link) in instance.links.iter().enumerate() {
            if link.tail == node {
                acc += self.flows[l];
            }
            if link.head == node {
                acc -= self.flows[l];
            }
        }
        acc
    }
}

// Head-difference laws, smoothed near zero flow. Each returns the value of
// h_tail − h_head implied by the flow, its derivative, and its integral from
// zero (the link's contribution to the single-step convex objective).

fn law_value(instance: &Instance, link: LinkIdx, q: f64) -> f64 {
    match &instance.links[link].kind {
        LinkKind::Pipe(p) => {
            let c = p.length * p.resistance;
            if q.abs() < Q_EPS {
                c * Q_EPS.powf(p.exponent - 1.0) * q
            } else {
                c * q * q.abs().powf(p.exponent - 1.0)
            }
        }
        LinkKind::Pump(p) => {
            // h_i − h_j = −(a + b·s(q)) with s the odd, smoothed power q^c.
            let s = if q.abs() < Q_EPS {
                Q_EPS.powf(p.gain_c - 1.0) * q
            } else {
                q.signum() * q.abs().powf(p.gain_c)
            };
            -(p.gain_a + p.gain_b * s)
        }
        LinkKind::Valve => VALVE_EPS * q,
    }
}

fn law_derivative(instance: &Instance, link: LinkIdx, q: f64) -> f64 {
    match &instance.links[link].kind {
        LinkKind::Pipe(p) => {
            let c = p.length * p.resistance;
            if q.abs() < Q_EPS {
                c * Q_EPS.powf(p.exponent - 1.0)
            } else {
                c * p.exponent * q.abs().powf(p.exponent - 1.0)
            }
        }
        LinkKind::Pump(p) => {
            let ds = if q.abs() < Q_EPS {
                Q_EPS.powf(p.gain_c - 1.0)
            } else {
                p.gain_c * q.abs().powf(p.gain_c - 1.0)
            };
            -p.gain_b * ds
        }
        LinkKind::Valve => VALVE_EPS,
    }
}

fn law_integral(instance: &Instance, link: LinkIdx, q: f64) -> f64 {
    match &instance.links[link].kind {
        LinkKind::Pipe(p) => {
            let c = p.length * p.resistance;
            let e = p.exponent;
            if q.abs() <= Q_EPS {
                0.5 * c * Q_EPS.powf(e - 1.0) * q * q
            } else {
                let seam = 0.5 * c * Q_EPS.powf(e + 1.0) - c * Q_EPS.powf(e + 1.0) / (e + 1.0);
                c * q.abs().powf(e + 1.0) / (e + 1.0) + seam
            }
        }
        LinkKind::Pump(p) => {
            let c = p.gain_c;
            let s_int = if q.abs() <= Q_EPS {
                0.5 * Q_EPS.powf(c - 1.0) * q * q
            } else {
                let seam = 0.5 * Q_EPS.powf(c + 1.0) - Q_EPS.powf(c + 1.0) / (c + 1.0);
                q.signum() * (q.abs().powf(c + 1.0) / (c + 1.0) + seam)
            };
            -(p.gain_a * q + p.gain_b * s_int)
        }
        LinkKind::Valve => 0.5 * VALVE_EPS * q * q,
    }
}

struct Component {
    nodes: Vec<NodeIdx>,
    links: Vec<LinkIdx>,
    boundary: Vec<NodeIdx>,
    free: Vec<NodeIdx>,
}

/// Solves the single-step steady state with the given controls and fixed tank
/// heads, returning converged flows and heads.
pub fn solve_steady_state(
    instance: &Instance,
    k: usize,
    controls: &ControlState,
    tank_heads: &BTreeMap<NodeIdx, f64>,
) -> Result<SteadyState, HydraulicsError> {
    if k >= instance.horizon() {
        return Err(HydraulicsError::StepOutOfRange { k });
    }
    for t in instance.tank_indices() {
        if !tank_heads.contains_key(&t) {
            return Err(HydraulicsError::MissingTankHead(instance.nodes[t].id.clone()));
        }
    }

    let fixed_head = |n: NodeIdx| -> Option<f64> {
        match &instance.nodes[n].kind {
            NodeKind::Reservoir => Some(instance.nodes[n].head_lb[k]),
            NodeKind::Tank(_) => tank_heads.get(&n).copied(),
            NodeKind::Demand(_) => None,
        }
    };

    let mut flows = vec![0.0; instance.links.len()];
    let mut heads = vec![0.0; instance.nodes.len()];

    for comp in components(instance, controls) {
        solve_component(instance, k, &comp, &fixed_head, &mut flows, &mut heads)?;
    }

    // pumps may not run backwards; tiny negatives are round-off
    for l in 0..instance.links.len() {
        if instance.links[l].is_pump() && controls.is_active(instance, l) {
            if flows[l] < -1e-9 {
                return Err(HydraulicsError::NegativePumpFlowRequired(instance.links[l].id.clone()));
            }
            flows[l] = flows[l].max(0.0);
        }
    }

    // exact (unsmoothed) residuals
    let mut max_law = 0.0f64;
    for l in 0..instance.links.len() {
        if !controls.is_active(instance, l) {
            continue;
        }
        let link = &instance.links[l];
        let dh = heads[link.tail] - heads[link.head];
        let resid = match &link.kind {
            LinkKind::Pipe(p) => dh - pipe_head_loss(p, flows[l]),
            LinkKind::Pump(p) => dh + pump_head_gain(p, flows[l], true)?,
            LinkKind::Valve => dh,
        };
        max_law = max_law.max(resid.abs());
    }
    let mut max_balance = 0.0f64;
    for (n, node) in instance.nodes.iter().enumerate() {
        if let NodeKind::Demand(d) = &node.kind {
            let mut acc = -d.rate[k];
            for (l, link) in instance.links.iter().enumerate() {
                if link.tail == n {
                    acc += flows[l];
                }
                if link.head == n {
                    acc -= flows[l];
                }
            }
            max_balance = max_balance.max(acc.abs());
        }
    }

    Ok(SteadyState { flows, heads, max_balance_residual: max_balance, max_law_residual: max_law })
}

fn components(instance: &Instance, controls: &ControlState) -> Vec<Component> {
    let n = instance.nodes.len();
    let mut comp_of = vec![usize::MAX; n];
    let mut comps: Vec<Component> = Vec::new();
    for start in 0..n {
        if comp_of[start] != usize::MAX {
            continue;
        }
        let id = comps.len();
        let mut stack = vec![start];
        comp_of[start] = id;
        let mut nodes = vec![start];
        while let Some(u) = stack.pop() {
            for (l, link) in instance.links.iter().enumerate() {
                if !controls.is_active(instance, l) {
                    continue;
                }
                let other = if link.tail == u {
                    link.head
                } else if link.head == u {
                    link.tail
                } else {
                    continue;
                };
                if comp_of[other] == usize::MAX {
                    comp_of[other] = id;
                    nodes.push(other);
                    stack.push(other);
                }
            }
        }
        comps.push(Component { nodes, links: Vec::new(), boundary: Vec::new(), free: Vec::new() });
    }
    for (l, link) in instance.links.iter().enumerate() {
        if controls.is_active(instance, l) {
            comps[comp_of[link.tail]].links.push(l);
        }
    }
    for comp in &mut comps {
        for &n in &comp.nodes {
            if instance.nodes[n].is_reservoir() || instance.nodes[n].is_tank() {
                comp.boundary.push(n);
            } else {
                comp.free.push(n);
            }
        }
    }
    comps
}

fn solve_component(
    instance: &Instance,
    k: usize,
    comp: &Component,
    fixed_head: &dyn Fn(NodeIdx) -> Option<f64>,
    flows: &mut [f64],
    heads: &mut [f64],
) -> Result<(), HydraulicsError> {
    // A component without a boundary node can only balance itself; pin one
    // head to make the system determinate.
    let pinned = if comp.boundary.is_empty() {
        let total: f64 = comp
            .free
            .iter()
            .map(|&n| match &instance.nodes[n].kind {
                NodeKind::Demand(d) => d.rate[k],
                _ => 0.0,
            })
            .sum();
        if total.abs() > 1e-9 {
            let offender = comp
                .free
                .iter()
                .find(|&&n| matches!(&instance.nodes[n].kind, NodeKind::Demand(d) if d.rate[k] != 0.0))
                .copied()
                .unwrap_or(comp.free[0]);
            return Err(HydraulicsError::DisconnectedDemand(instance.nodes[offender].id.clone()));
        }
        let reference = *comp.nodes.iter().min().unwrap();
        Some(reference)
    } else {
        None
    };

    for &b in &comp.boundary {
        heads[b] = fixed_head(b).expect("boundary head");
    }
    if let Some(p) = pinned {
        let node = &instance.nodes[p];
        heads[p] = 0.5 * (node.head_lb[k] + node.head_ub[k]);
    }

    // unknown layout: flows for component links, then heads for solvable nodes
    let solve_nodes: Vec<NodeIdx> =
        comp.free.iter().copied().filter(|&n| Some(n) != pinned).collect();
    let nl = comp.links.len();
    let nh = solve_nodes.len();
    let dim = nl + nh;
    if dim == 0 {
        return Ok(());
    }
    let mut head_col: BTreeMap<NodeIdx, usize> = BTreeMap::new();
    for (i, &n) in solve_nodes.iter().enumerate() {
        head_col.insert(n, nl + i);
    }

    let boundary_mean = if comp.boundary.is_empty() {
        heads[pinned.unwrap()]
    } else {
        comp.boundary.iter().map(|&b| heads[b]).sum::<f64>() / comp.boundary.len() as f64
    };

    let mut q: Vec<f64> = comp
        .links
        .iter()
        .map(|&l| if instance.links[l].is_pump() { 0.5 * instance.links[l].dir_flow_ub_pos(k) } else { 0.0 })
        .collect();
    let mut h: Vec<f64> = solve_nodes.iter().map(|_| boundary_mean).collect();

    let head_of = |n: NodeIdx, h: &[f64], heads: &[f64]| -> f64 {
        if let Some(&col) = head_col.get(&n) {
            h[col - nl]
        } else {
            heads[n]
        }
    };

    let residual = |q: &[f64], h: &[f64], heads: &[f64]| -> Vec<f64> {
        let mut f = vec![0.0; dim];
        for (row, &l) in comp.links.iter().enumerate() {
            let link = &instance.links[l];
            let hi = head_of(link.tail, h, heads);
            let hj = head_of(link.head, h, heads);
            f[row] = law_value(instance, l, q[row]) - (hi - hj);
        }
        for (i, &n) in solve_nodes.iter().enumerate() {
            let rate = match &instance.nodes[n].kind {
                NodeKind::Demand(d) => d.rate[k],
                _ => 0.0,
            };
            let mut acc = -rate;
            for (row, &l) in comp.links.iter().enumerate() {
                if instance.links[l].tail == n {
                    acc += q[row];
                }
                if instance.links[l].head == n {
                    acc -= q[row];
                }
            }
            f[nl + i] = acc;
        }
        f
    };

    let content = |q: &[f64], heads: &[f64]| -> f64 {
        let mut obj = 0.0;
        for (row, &l) in comp.links.iter().enumerate() {
            obj += law_integral(instance, l, q[row]);
        }
        for &b in &comp.boundary {
            let mut net = 0.0;
            for (row, &l) in comp.links.iter().enumerate() {
                if instance.links[l].tail == b {
                    net += q[row];
                }
                if instance.links[l].head == b {
                    net -= q[row];
                }
            }
            obj -= heads[b] * net;
        }
        obj
    };

    let inf_norm = |f: &[f64]| f.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let mut f = residual(&q, &h, heads);
    for iter in 0..MAX_NEWTON_ITERS {
        let norm = inf_norm(&f);
        if norm <= RESIDUAL_TOL {
            for (row, &l) in comp.links.iter().enumerate() {
                flows[l] = q[row];
            }
            for (i, &n) in solve_nodes.iter().enumerate() {
                heads[n] = h[i];
            }
            return Ok(());
        }

        let mut jac = Matrix::zeros(dim, dim);
        for (row, &l) in comp.links.iter().enumerate() {
            jac.set(row, row, law_derivative(instance, l, q[row]));
            let link = &instance.links[l];
            if let Some(&col) = head_col.get(&link.tail) {
                jac.add(row, col, -1.0);
            }
            if let Some(&col) = head_col.get(&link.head) {
                jac.add(row, col, 1.0);
            }
        }
        for (i, &n) in solve_nodes.iter().enumerate() {
            for (row, &l) in comp.links.iter().enumerate() {
                if instance.links[l].tail == n {
                    jac.add(nl + i, row, 1.0);
                }
                if instance.links[l].head == n {
                    jac.add(nl + i, row, -1.0);
                }
            }
        }

        let lu = Lu::factor(&jac).map_err(|_| HydraulicsError::NonConvergence(norm))?;
        let rhs: Vec<f64> = f.iter().map(|v| -v).collect();
        let delta = lu.solve(&rhs);
        let dq = &delta[..nl];
        let dh = &delta[nl..];

        // Full steps keep the linear conservation rows exact; take them
        // whenever they reduce the residual.
        let apply = |t: f64, q: &[f64], h: &[f64]| -> (Vec<f64>, Vec<f64>) {
            let q2: Vec<f64> = q.iter().zip(dq).map(|(v, d)| v + t * d).collect();
            let h2: Vec<f64> = h.iter().zip(dh).map(|(v, d)| v + t * d).collect();
            (q2, h2)
        };

        let (q_full, h_full) = apply(1.0, &q, &h);
        let f_full = residual(&q_full, &h_full, heads);
        if iter == 0 || inf_norm(&f_full) < (1.0 - 1e-4) * norm {
            q = q_full;
            h = h_full;
            f = f_full;
            continue;
        }

        // Stalled: bisection line search on the convex single-step objective
        // along the flow direction. The derivative of the objective in t is
        // monotone, so bisection brackets its root.
        let dir_deriv = |t: f64| -> f64 {
            let (qt, _) = apply(t, &q, &h);
            let mut g = 0.0;
            for (row, &l) in comp.links.iter().enumerate() {
                g += law_value(instance, l, qt[row]) * dq[row];
            }
            for &b in &comp.boundary {
                let mut net = 0.0;
                for (row, &l) in comp.links.iter().enumerate() {
                    if instance.links[l].tail == b {
                        net += dq[row];
                    }
                    if instance.links[l].head == b {
                        net -= dq[row];
                    }
                }
                g -= heads[b] * net;
            }
            g
        };

        let mut t = 1.0;
        if dir_deriv(1.0) > 0.0 {
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if dir_deriv(mid) > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            t = 0.5 * (lo + hi).max(1e-12);
        }
        let before = content(&q, heads);
        let (q_t, h_t) = apply(t, &q, &h);
        let after = content(&q_t, heads);
        let f_t = residual(&q_t, &h_t, heads);
        if after <= before || inf_norm(&f_t) < norm {
            q = q_t;
            h = h_t;
            f = f_t;
        } else {
            // accept the full step as a last resort and let the cap decide
            q = q_full;
            h = h_full;
            f = f_full;
        }
    }
    Err(HydraulicsError::NonConvergence(inf_norm(&f)))
}

/// Evaluates the single-step convex network-analysis objective exactly as
/// written, from directed flow splits and fixed boundary heads.
///
/// `flows[l] = (q⁺, q⁻)` per link; inactive links are ignored. `fixed_heads`
/// supplies heads for reservoirs and tanks by node index.
pub fn content_objective(
    instance: &Instance,
    k: usize,
    controls: &ControlState,
    flows: &[(f64, f64)],
    fixed_heads: &[f64],
) -> Result<f64, HydraulicsError> {
    if k >= instance.horizon() {
        return Err(HydraulicsError::StepOutOfRange { k });
    }
    let mut obj = 0.0;
    for (l, link) in instance.links.iter().enumerate() {
        if !controls.is_active(instance, l) {
            continue;
        }
        let (qp, qm) = flows[l];
        if qp < 0.0 {
            return Err(HydraulicsError::NegativeDirectedFlow(qp));
        }
        if qm < 0.0 {
            return Err(HydraulicsError::NegativeDirectedFlow(qm));
        }
        match &link.kind {
            LinkKind::Pipe(p) => {
                let e = p.exponent;
                obj += p.length * p.resistance / (1.0 + e) * (qp.powf(1.0 + e) + qm.powf(1.0 + e));
            }
            LinkKind::Pump(p) => {
                obj -= p.gain_a * qp + p.gain_b * qp.powf(p.gain_c + 1.0) / (p.gain_c + 1.0);
            }
            LinkKind::Valve => {}
        }
    }
    for (n, node) in instance.nodes.iter().enumerate() {
        if !(node.is_reservoir() || node.is_tank()) {
            continue;
        }
        let mut net = 0.0;
        for (l, link) in instance.links.iter().enumerate() {
            if !controls.is_active(instance, l) {
                continue;
            }
            let signed = flows[l].0 - flows[l].1;
            if link.tail == n {
                net += signed;
            }
            if link.head == n {
                net -= signed;
            }
        }
        obj -= fixed_heads[n] * net;
    }
    Ok(obj)
}

/// Evaluates the dual (co-content) objective from heads alone.
///
/// Requires equal heads across active valves and a nonnegative implied gain
/// `h_j − h_i` on every active pump.
pub fn cocontent_objective(
    instance: &Instance,
    k: usize,
    controls: &ControlState,
    heads: &[f64],
) -> Result<f64, HydraulicsError> {
    if k >= instance.horizon() {
        return Err(HydraulicsError::StepOutOfRange { k });
    }
    let mut obj = 0.0;
    for (n, node) in instance.nodes.iter().enumerate() {
        if let NodeKind::Demand(d) = &node.kind {
            obj += heads[n] * d.rate[k];
        }
    }
    for (l, link) in instance.links.iter().enumerate() {
        if !controls.is_active(instance, l) {
            continue;
        }
        let dh = heads[link.tail] - heads[link.head];
        match &link.kind {
            LinkKind::Pipe(p) => {
                let e = p.exponent;
                let dh_pos = dh.max(0.0);
                let dh_neg = (-dh).max(0.0);
                let scale = 1.0 / (p.length * p.resistance).powf(1.0 / e);
                obj -= e / (1.0 + e)
                    * scale
                    * (dh_pos.powf(1.0 + 1.0 / e) + dh_neg.powf(1.0 + 1.0 / e));
            }
            LinkKind::Pump(p) => {
                let gain = -dh; // h_j − h_i
                if gain < -1e-7 {
                    return Err(HydraulicsError::NegativeImpliedGain(gain));
                }
                let gain = gain.max(0.0);
                // beyond the shutoff head the inner maximization sits at zero flow
                if gain < p.gain_a {
                    let ratio = (gain - p.gain_a) / p.gain_b;
                    obj -= p.gain_b * ratio.powf(1.0 + 1.0 / p.gain_c) / (p.gain_c + 1.0)
                        + (p.gain_a - gain) * ratio.powf(1.0 / p.gain_c);
                }
            }
            LinkKind::Valve => {
                if dh.abs() > 1e-7 {
                    return Err(HydraulicsError::ValveHeadsUnequal(dh));
                }
            }
        }
    }
    Ok(obj)
}

/// One detected trajectory violation.
#[derive(Debug, Clone)]
pub struct TrajectoryViolation {
    /// 1-based time index of the violation.
    pub step: usize,
    pub entity: String,
    pub message: String,
}

/// Outcome of extended-period simulation.
#[derive(Debug, Clone)]
pub struct SimulationResult {
    /// Converged states for the steps that were reached.
    pub steps: Vec<SteadyState>,
    /// Tank volumes over time, indexed `[tank][0..=K]`, aligned with
    /// [`Instance::tank_indices`]. Truncated if simulation stops early.
    pub tank_volumes: Vec<Vec<f64>>,
    pub feasible: bool,
    /// Smallest 1-based step index with a violation; tank recovery failures
    /// map to the final step `K`.
    pub first_infeasible_step: Option<usize>,
    pub violations: Vec<TrajectoryViolation>,
}

impl SimulationResult {
    /// Objective value `Σ λ·q + μ·z` of the simulated schedule.
    pub fn cost(&self, instance: &Instance, schedule: &Schedule) -> f64 {
        let mut cost = 0.0;
        for (k, state) in self.steps.iter().enumerate() {
            for (l, link) in instance.links.iter().enumerate() {
                if let LinkKind::Pump(p) = &link.kind {
                    let z = schedule.steps[k].status(l).unwrap_or(false);
                    cost += p.energy_cost[k] * state.flows[l];
                    if z {
                        cost += p.activation_cost[k];
                    }
                }
            }
        }
        cost
    }
}

/// Chains steady states across the horizon, integrating tank volumes with
/// explicit Euler steps and checking all operational bounds.
///
/// Steady-state failures (disconnection, nonconvergence, reverse pump flow)
/// are reported as infeasibility at that step, not as faults.
pub fn simulate(instance: &Instance, schedule: &Schedule) -> Result<SimulationResult, HydraulicsError> {
    let horizon = instance.horizon();
    if schedule.steps.len() != horizon {
        return Err(HydraulicsError::StepOutOfRange { k: schedule.steps.len() });
    }
    let tanks = instance.tank_indices();
    let mut volumes: Vec<Vec<f64>> = tanks
        .iter()
        .map(|&t| vec![instance.nodes[t].as_tank().unwrap().initial_volume])
        .collect();
    let mut result = SimulationResult {
        steps: Vec::new(),
        tank_volumes: Vec::new(),
        feasible: true,
        first_infeasible_step: None,
        violations: Vec::new(),
    };

    let fail = |result: &mut SimulationResult, step: usize, entity: &str, message: String| {
        result.feasible = false;
        if result.first_infeasible_step.is_none() {
            result.first_infeasible_step = Some(step);
        }
        result.violations.push(TrajectoryViolation { step, entity: entity.to_string(), message });
    };

    // the initial fill level is instance data; re-check it all the same
    for (ti, &t) in tanks.iter().enumerate() {
        let node = &instance.nodes[t];
        let tank = node.as_tank().unwrap();
        let head = crate::network::tank_head(tank, volumes[ti][0]).unwrap_or(tank.bottom);
        if head < node.head_lb[0] - BOUND_TOL || head > node.head_ub[0] + BOUND_TOL {
            fail(&mut result, 1, &node.id, format!("initial tank head {head:.6} outside [{}, {}]", node.head_lb[0], node.head_ub[0]));
        }
    }

    'steps: for k in 0..horizon {
        let step1 = k + 1;
        if !result.feasible {
            break;
        }
        let mut tank_heads = BTreeMap::new();
        for (ti, &t) in tanks.iter().enumerate() {
            let tank = instance.nodes[t].as_tank().unwrap();
            let head = crate::network::tank_head(tank, volumes[ti][k].max(0.0)).unwrap_or(tank.bottom);
            tank_heads.insert(t, head);
        }

        let state = match solve_steady_state(instance, k, &schedule.steps[k], &tank_heads) {
            Ok(s) => s,
            Err(e) => {
                fail(&mut result, step1, "steady-state", e.to_string());
                break 'steps;
            }
        };

        // head bounds at non-tank nodes; reservoirs may only supply
        for (n, node) in instance.nodes.iter().enumerate() {
            if node.is_tank() {
                continue;
            }
            let h = state.heads[n];
            if h < node.head_lb[k] - BOUND_TOL || h > node.head_ub[k] + BOUND_TOL {
                fail(&mut result, step1, &node.id, format!("head {h:.6} outside [{}, {}]", node.head_lb[k], node.head_ub[k]));
            }
            if node.is_reservoir() {
                let supply = state.net_outflow(instance, n);
                if supply < -BOUND_TOL {
                    fail(&mut result, step1, &node.id, format!("reservoir would absorb {supply:.6} m^3/s"));
                }
            }
        }
        // flow bounds
        for (l, link) in instance.links.iter().enumerate() {
            let q = state.flows[l];
            if q < link.flow_lb[k] - BOUND_TOL || q > link.flow_ub[k] + BOUND_TOL {
                fail(&mut result, step1, &link.id, format!("flow {q:.6} outside [{}, {}]", link.flow_lb[k], link.flow_ub[k]));
            }
            if link.is_pump() && schedule.steps[k].status(l) == Some(true) {
                let qmin = link.dir_flow_lb_pos[k];
                if q < qmin - BOUND_TOL {
                    fail(&mut result, step1, &link.id, format!("active pump flow {q:.6} below minimum {qmin}"));
                }
            }
        }
        // tank throughput bounds, Euler integration, and the level the
        // integration produces (head bound at index k+1, charged to step k)
        for (ti, &t) in tanks.iter().enumerate() {
            let node = &instance.nodes[t];
            let tank = node.as_tank().unwrap();
            let outflow = state.net_outflow(instance, t);
            if outflow < tank.flow_lb[k] - BOUND_TOL || outflow > tank.flow_ub[k] + BOUND_TOL {
                fail(&mut result, step1, &node.id, format!("tank flow {outflow:.6} outside [{}, {}]", tank.flow_lb[k], tank.flow_ub[k]));
            }
            let next = volumes[ti][k] - instance.dt[k] * outflow;
            volumes[ti].push(next);
            let head = crate::network::tank_head(tank, next.max(0.0)).unwrap_or(tank.bottom);
            if head < node.head_lb[k + 1] - BOUND_TOL || head > node.head_ub[k + 1] + BOUND_TOL {
                fail(&mut result, step1, &node.id, format!("tank head {head:.6} outside [{}, {}] after step {step1}", node.head_lb[k + 1], node.head_ub[k + 1]));
            }
        }
        result.steps.push(state);
        if !result.feasible {
            break;
        }
    }

    // tank recovery applies only to complete trajectories
    if result.steps.len() == horizon {
        for (ti, &t) in tanks.iter().enumerate() {
            let node = &instance.nodes[t];
            let tank = node.as_tank().unwrap();
            let final_volume = volumes[ti][horizon];
            if final_volume < tank.initial_volume - 1e-9 {
                fail(&mut result, horizon, &node.id, format!("final volume {final_volume:.6} below initial {}", tank.initial_volume));
            }
        }
    }

    result.tank_volumes = volumes;
    Ok(result)
}

/// Statically checks the minimum on/off durations and switch count of a
/// schedule against each pump's switching limits.
pub fn check_switching(instance: &Instance, schedule: &Schedule) -> Vec<TrajectoryViolation> {
    let mut violations = Vec::new();
    let stamps = instance.time_stamps();
    let horizon = instance.horizon();
    for l in instance.pump_indices() {
        let pump = instance.links[l].as_pump().unwrap();
        let z: Vec<bool> = (0..horizon).map(|k| schedule.steps[k].status(l).unwrap_or(false)).collect();
        let mut starts = 0u32;
        for k in 1..horizon {
            if z[k] && !z[k - 1] {
                starts += 1;
                for kk in k..horizon {
                    let in_window = kk == k || stamps[kk] + 1e-9 < stamps[k] + pump.min_on_secs;
                    if in_window && !z[kk] {
                        violations.push(TrajectoryViolation {
                            step: k + 1,
                            entity: instance.links[l].id.clone(),
                            message: format!("pump switched on at step {} but off again at step {}", k + 1, kk + 1),
                        });
                        break;
                    }
                }
            }
            if !z[k] && z[k - 1] {
                for kk in k..horizon {
                    let in_window = kk == k || stamps[kk] + 1e-9 < stamps[k] + pump.min_off_secs;
                    if in_window && z[kk] {
                        violations.push(TrajectoryViolation {
                            step: k + 1,
                            entity: instance.links[l].id.clone(),
                            message: format!("pump switched off at step {} but on again at step {}", k + 1, kk + 1),
                        });
                        break;
                    }
                }
            }
        }
        if starts > pump.max_starts {
            violations.push(TrajectoryViolation {
                step: horizon,
                entity: instance.links[l].id.clone(),
                message: format!("{starts} starts exceed the limit of {}", pump.max_starts),
            });
        }
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::network::Pipe;

    fn test_pipe() -> Pipe {
        Pipe { length: 1000.0, resistance: 0.0012, exponent: 1.852 }
    }

    #[test]
    fn head_loss_values_and_oddness() {
        let p = test_pipe();
        assert_eq!(pipe_head_loss(&p, 0.0), 0.0);
        let dh = pipe_head_loss(&p, 0.1);
        assert!((dh - 0.016872).abs() < 1e-5, "dh = {dh}");
        assert!((pipe_head_loss(&p, -0.1) + dh).abs() < 1e-15);
        // strictly increasing
        let mut prev = f64::NEG_INFINITY;
        for i in -20..=20 {
            let v = pipe_head_loss(&p, i as f64 * 0.05);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn head_loss_derivative_matches_central_differences() {
        let p = test_pipe();
        for &q in &[0.01f64, 0.1, 0.5, -0.2, 1.3] {
            let eps = 1e-6 * q.abs().max(1.0);
            let fd = (pipe_head_loss(&p, q + eps) - pipe_head_loss(&p, q - eps)) / (2.0 * eps);
            let an = pipe_head_loss_derivative(&p, q);
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-12), "q={q} fd={fd} an={an}");
        }
    }

    fn test_pump() -> Pump {
        Pump {
            gain_a: 100.0,
            gain_b: -50.0,
            gain_c: 2.0,
            energy_cost: vec![1.0],
            activation_cost: vec![1.0],
            min_on_secs: 0.0,
            min_off_secs: 0.0,
            max_starts: 10,
            symmetry_group: None,
        }
    }

    #[test]
    fn pump_gain_examples() {
        let p = test_pump();
        assert_eq!(pump_head_gain(&p, 0.0, true).unwrap(), 100.0);
        assert_eq!(pump_head_gain(&p, 1.0, true).unwrap(), 50.0);
        assert_eq!(pump_head_gain(&p, 0.0, false).unwrap(), 0.0);
        assert!(pump_head_gain(&p, 0.5, false).is_err());
    }

    #[test]
    fn single_pipe_steady_state_matches_closed_form() {
        let inst = fixtures::single_pipe_instance();
        let controls = ControlState::uniform(&inst, true);
        let state = solve_steady_state(&inst, 0, &controls, &BTreeMap::new()).unwrap();
        let pipe = inst.link_index("main").unwrap();
        let load = inst.node_index("load").unwrap();
        assert!((state.flows[pipe] - 0.1).abs() < 1e-9);
        let expect = 100.0 - pipe_head_loss(inst.links[pipe].as_pipe().unwrap(), 0.1);
        assert!((state.heads[load] - expect).abs() < 1e-8, "head {}", state.heads[load]);
        assert!(state.max_balance_residual <= 1e-8);
        assert!(state.max_law_residual <= 1e-8);
    }

    #[test]
    fn all_off_zero_demand_is_quiescent() {
        let inst = fixtures::path_instance();
        let controls = ControlState::uniform(&inst, false);
        let state = solve_steady_state(&inst, 0, &controls, &BTreeMap::new()).unwrap();
        assert!(state.flows.iter().all(|&q| q.abs() <= 1e-12));
        assert!(state.max_balance_residual == 0.0);
    }

    #[test]
    fn parallel_pipes_split_symmetrically() {
        let mut b = fixtures::InstanceBuilder::new(vec![3600.0]);
        let r = b.reservoir("r", 100.0);
        let d = b.demand("d", vec![-0.2], 50.0, 100.0);
        b.pipe("p1", r, d, 1000.0, 0.0012, 1.0);
        b.pipe("p2", r, d, 1000.0, 0.0012, 1.0);
        let inst = b.build();
        let controls = ControlState::uniform(&inst, true);
        let state = solve_steady_state(&inst, 0, &controls, &BTreeMap::new()).unwrap();
        assert!((state.flows[0] - 0.1).abs() < 1e-9);
        assert!((state.flows[1] - 0.1).abs() < 1e-9);
    }

    #[test]
    fn steady_state_invariant_under_link_order() {
        let inst = fixtures::pump_tank_instance(2);
        let mut permuted = inst.clone();
        permuted.links.reverse();
        let controls = ControlState::uniform(&inst, true);
        let controls_p = ControlState::uniform(&permuted, true);
        let mut tank_heads = BTreeMap::new();
        for &t in &inst.tank_indices() {
            tank_heads.insert(t, 27.0);
        }
        let a = solve_steady_state(&inst, 0, &controls, &tank_heads).unwrap();
        let b = solve_steady_state(&permuted, 0, &controls_p, &tank_heads).unwrap();
        for (l, link) in inst.links.iter().enumerate() {
            let lp = permuted.link_index(&link.id).unwrap();
            assert!((a.flows[l] - b.flows[lp]).abs() <= 1e-8);
        }
    }

    #[test]
    fn disconnected_demand_is_reported() {
        let inst = fixtures::parallel_pumps_instance(2, 2);
        let controls = ControlState::uniform(&inst, false);
        let err = solve_steady_state(&inst, 0, &controls, &BTreeMap::new()).unwrap_err();
        match err {
            HydraulicsError::DisconnectedDemand(id) => assert_eq!(id, "city"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn content_and_cocontent_agree_at_steady_state() {
        let inst = fixtures::single_pipe_instance();
        let controls = ControlState::uniform(&inst, true);
        let state = solve_steady_state(&inst, 0, &controls, &BTreeMap::new()).unwrap();
        let flows: Vec<(f64, f64)> =
            state.flows.iter().map(|&q| (q.max(0.0), (-q).max(0.0))).collect();
        let fp = content_objective(&inst, 0, &controls, &flows, &state.heads).unwrap();
        let fd = cocontent_objective(&inst, 0, &controls, &state.heads).unwrap();
        assert!((fp - fd).abs() <= 1e-6 * (1.0 + fp.abs()), "fp={fp} fd={fd}");
    }

    #[test]
    fn content_zero_when_idle() {
        let inst = fixtures::path_instance();
        let controls = ControlState::uniform(&inst, true);
        let flows = vec![(0.0, 0.0); inst.links.len()];
        let heads = vec![50.0; inst.nodes.len()];
        assert_eq!(content_objective(&inst, 0, &controls, &flows, &heads).unwrap(), 0.0);
        assert_eq!(cocontent_objective(&inst, 0, &controls, &heads).unwrap(), 0.0);
    }

    #[test]
    fn content_objective_rejects_negative_directed_flow() {
        let inst = fixtures::single_pipe_instance();
        let controls = ControlState::uniform(&inst, true);
        let flows = vec![(-0.1, 0.0); inst.links.len()];
        let heads = vec![100.0; inst.nodes.len()];
        assert!(content_objective(&inst, 0, &controls, &flows, &heads).is_err());
    }

    #[test]
    fn perturbed_flows_increase_content() {
        // two parallel pipes leave one conservation-preserving degree of
        // freedom: shifting flow between them must increase the objective
        let mut b = fixtures::InstanceBuilder::new(vec![3600.0]);
        let r = b.reservoir("r", 100.0);
        let d = b.demand("d", vec![-0.2], 50.0, 100.0);
        b.pipe("p1", r, d, 1000.0, 0.0012, 1.0);
        b.pipe("p2", r, d, 1000.0, 0.0012, 1.0);
        let inst = b.build();
        let controls = ControlState::uniform(&inst, true);
        let state = solve_steady_state(&inst, 0, &controls, &BTreeMap::new()).unwrap();
        let base: Vec<(f64, f64)> =
            state.flows.iter().map(|&q| (q.max(0.0), (-q).max(0.0))).collect();
        let f0 = content_objective(&inst, 0, &controls, &base, &state.heads).unwrap();
        for &eps in &[1e-3, 1e-2, 0.05] {
            let pert = vec![(base[0].0 + eps, 0.0), (base[1].0 - eps, 0.0)];
            let f = content_objective(&inst, 0, &controls, &pert, &state.heads).unwrap();
            assert!(f > f0, "eps={eps}: {f} vs {f0}");
        }
    }

    #[test]
    fn perturbed_heads_decrease_cocontent() {
        let inst = fixtures::single_pipe_instance();
        let controls = ControlState::uniform(&inst, true);
        let state = solve_steady_state(&inst, 0, &controls, &BTreeMap::new()).unwrap();
        let f0 = cocontent_objective(&inst, 0, &controls, &state.heads).unwrap();
        let load = inst.node_index("load").unwrap();
        for &eps in &[1e-3, -1e-3, 0.05, -0.05] {
            let mut heads = state.heads.clone();
            heads[load] += eps;
            let f = cocontent_objective(&inst, 0, &controls, &heads).unwrap();
            assert!(f < f0 + 1e-12, "eps={eps}: {f} vs {f0}");
        }
    }

    #[test]
    fn simulation_detects_tank_draw_down_at_step_three() {
        let inst = fixtures::tank_drain_instance();
        let schedule = Schedule::uniform(&inst, true);
        let result = simulate(&inst, &schedule).unwrap();
        assert!(!result.feasible);
        assert_eq!(result.first_infeasible_step, Some(3));
    }

    #[test]
    fn simulation_flags_disconnected_demand_at_first_step() {
        let inst = fixtures::parallel_pumps_instance(2, 2);
        let schedule = Schedule::uniform(&inst, false);
        let result = simulate(&inst, &schedule).unwrap();
        assert!(!result.feasible);
        assert_eq!(result.first_infeasible_step, Some(1));
    }

    #[test]
    fn zero_demand_all_off_simulates_flat() {
        let mut b = fixtures::InstanceBuilder::new(vec![100.0; 3]);
        let t = b.tank("tk", 2.0, 0.0, 10.0, 5.0, 15.0, 0.5);
        let j = b.junction("j", 0.0, 20.0);
        b.pipe("p", t, j, 10.0, 0.001, 1.0);
        let inst = b.build();
        let schedule = Schedule::uniform(&inst, false);
        let result = simulate(&inst, &schedule).unwrap();
        assert!(result.feasible, "{:?}", result.violations);
        let v = &result.tank_volumes[0];
        assert!(v.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12));
    }

    #[test]
    fn euler_integration_telescopes() {
        let inst = fixtures::pump_tank_instance(4);
        let schedule = Schedule::uniform(&inst, true);
        let result = simulate(&inst, &schedule).unwrap();
        assert!(result.feasible, "{:?}", result.violations);
        let tank = inst.tank_indices()[0];
        let v = &result.tank_volumes[0];
        let total: f64 = (0..4)
            .map(|k| -inst.dt[k] * result.steps[k].net_outflow(&inst, tank))
            .sum();
        assert!(((v[4] - v[0]) - total).abs() < 1e-12);
    }

    #[test]
    fn switching_check_flags_short_runs() {
        let inst = fixtures::switching_instance(4);
        let pump = inst.pump_indices()[0];
        let mut map = BTreeMap::new();
        map.insert(inst.links[pump].id.clone(), vec![false, false, true, false]);
        let schedule = Schedule::from_status_map(&inst, &map).unwrap();
        let violations = check_switching(&inst, &schedule);
        assert!(!violations.is_empty());

        map.insert(inst.links[pump].id.clone(), vec![false, false, true, true]);
        let schedule = Schedule::from_status_map(&inst, &map).unwrap();
        assert!(check_switching(&inst, &schedule).is_empty());
    }

    #[test]
    fn mass_conservation_holds_across_fixture_simulations() {
        for inst in fixtures::oracle_instances() {
            let schedule = Schedule::uniform(&inst, true);
            let result = simulate(&inst, &schedule).unwrap();
            for state in &result.steps {
                assert!(state.max_balance_residual <= 1e-8);
                assert!(state.max_law_residual <= 1e-8);
            }
        }
    }
}

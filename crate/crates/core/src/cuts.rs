//! Valid-inequality generators. Every cut is expressed over registry keys and
//! resolved against a concrete model when applied; each one is satisfied by
//! the lifted assignment of every simulator-feasible schedule.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formulation::Partition;
use crate::hydraulics::ControlState;
use crate::model::{Dir, MilpModel, ModelError, Sense, VarKey, VarKind};
use crate::network::{Instance, LinkKind, NodeKind};
use crate::preprocess::BoundsStore;

#[derive(Debug, Error)]
pub enum CutError {
    #[error("bounds must be finite for a McCormick envelope")]
    UnboundedBox,
    #[error("no-good cut needs a nonempty prefix")]
    EmptyPrefix,
    #[error("missing partition for link {0}")]
    MissingPartition(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Which generator produced a cut.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Symmetry,
    DirectionVi,
    Duality,
    Obcg,
    NoGood,
}

impl Provenance {
    pub fn tag(&self) -> &'static str {
        match self {
            Provenance::Symmetry => "symmetry",
            Provenance::DirectionVi => "direction-vi",
            Provenance::Duality => "duality",
            Provenance::Obcg => "obcg",
            Provenance::NoGood => "no-good",
        }
    }
}

/// Validity scope of a cut.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CutScope {
    Global,
    Step(usize),
}

/// A sparse inequality over registry keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cut {
    pub terms: Vec<(VarKey, f64)>,
    pub sense: Sense,
    pub rhs: f64,
    pub provenance: Provenance,
    pub scope: CutScope,
}

impl Cut {
    /// Evaluates the cut's slack at a keyed point; positive means satisfied
    /// with room, negative means violated by that amount.
    pub fn slack(&self, model: &MilpModel, x: &[f64]) -> Option<f64> {
        let mut lhs = 0.0;
        for &(key, c) in &self.terms {
            lhs += c * x[model.lookup(key)?];
        }
        Some(match self.sense {
            Sense::Le => self.rhs - lhs,
            Sense::Ge => lhs - self.rhs,
            Sense::Eq => -(lhs - self.rhs).abs(),
        })
    }
}

/// Appends a cut to a model, resolving registry keys. Terms whose key is not
/// registered make the application fail; cuts never invent variables.
pub fn apply_cut(model: &mut MilpModel, cut: &Cut) -> Result<usize, ModelError> {
    let mut terms = Vec::with_capacity(cut.terms.len());
    for &(key, c) in &cut.terms {
        terms.push((model.var(key)?, c));
    }
    model.add_constraint(format!("cut:{}", cut.provenance.tag()), terms, cut.sense, cut.rhs)
}

pub fn apply_cuts(model: &mut MilpModel, cuts: &[Cut]) -> Result<(), ModelError> {
    for cut in cuts {
        apply_cut(model, cut)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// symmetry breaking

/// Orders the statuses of interchangeable parallel pumps: within each group
/// and step, a pump may run only if its lexicographic successor does.
pub fn symmetry_cuts(instance: &Instance) -> Vec<Cut> {
    let mut cuts = Vec::new();
    for group in instance.pump_groups() {
        for pair in group.windows(2) {
            for k in 0..instance.horizon() {
                cuts.push(Cut {
                    terms: vec![
                        (VarKey::Status { link: pair[0], k }, 1.0),
                        (VarKey::Status { link: pair[1], k }, -1.0),
                    ],
                    sense: Sense::Le,
                    rhs: 0.0,
                    provenance: Provenance::Symmetry,
                    scope: CutScope::Step(k),
                });
            }
        }
    }
    cuts
}

// ---------------------------------------------------------------------------
// direction-based valid inequalities

/// Flow-direction implications of sources, consumers, and pass-through
/// junctions:
///
/// * every source (reservoir or injecting demand) must point at least one
///   incident link away from itself,
/// * every consuming demand must have at least one link pointing at it,
/// * a zero-demand junction of degree two passes its direction through.
pub fn direction_vis(instance: &Instance) -> Vec<Cut> {
    let mut cuts = Vec::new();
    for k in 0..instance.horizon() {
        for (n, node) in instance.nodes.iter().enumerate() {
            let (out, inc) = instance.incidence(n);
            let rate = match &node.kind {
                NodeKind::Demand(d) => Some(d.rate[k]),
                _ => None,
            };
            let is_source = node.is_reservoir() || rate.is_some_and(|r| r > 0.0);
            if is_source && !(out.is_empty() && inc.is_empty()) {
                let mut terms = Vec::new();
                let mut rhs = 1.0;
                for &l in &out {
                    terms.push((VarKey::Direction { link: l, k }, 1.0));
                }
                for &l in &inc {
                    terms.push((VarKey::Direction { link: l, k }, -1.0));
                    rhs -= 1.0;
                }
                cuts.push(Cut { terms, sense: Sense::Ge, rhs, provenance: Provenance::DirectionVi, scope: CutScope::Step(k) });
            }
            if rate.is_some_and(|r| r < 0.0) {
                let mut terms = Vec::new();
                let mut rhs = 1.0;
                for &l in &inc {
                    terms.push((VarKey::Direction { link: l, k }, 1.0));
                }
                for &l in &out {
                    terms.push((VarKey::Direction { link: l, k }, -1.0));
                    rhs -= 1.0;
                }
                cuts.push(Cut { terms, sense: Sense::Ge, rhs, provenance: Provenance::DirectionVi, scope: CutScope::Step(k) });
            }
            if rate == Some(0.0) {
                if out.len() == 1 && inc.len() == 1 {
                    cuts.push(Cut {
                        terms: vec![
                            (VarKey::Direction { link: inc[0], k }, 1.0),
                            (VarKey::Direction { link: out[0], k }, -1.0),
                        ],
                        sense: Sense::Eq,
                        rhs: 0.0,
                        provenance: Provenance::DirectionVi,
                        scope: CutScope::Step(k),
                    });
                } else if out.len() + inc.len() == 2 && (out.is_empty() || inc.is_empty()) {
                    let pair: Vec<usize> = out.iter().chain(inc.iter()).copied().collect();
                    cuts.push(Cut {
                        terms: vec![
                            (VarKey::Direction { link: pair[0], k }, 1.0),
                            (VarKey::Direction { link: pair[1], k }, 1.0),
                        ],
                        sense: Sense::Eq,
                        rhs: 1.0,
                        provenance: Provenance::DirectionVi,
                        scope: CutScope::Step(k),
                    });
                }
            }
        }
    }
    cuts
}

// ---------------------------------------------------------------------------
// McCormick envelopes

/// The four envelope inequalities relaxing `w ≈ x·y` over a finite box.
pub fn mccormick(
    w: VarKey,
    x: VarKey,
    y: VarKey,
    x_lb: f64,
    x_ub: f64,
    y_lb: f64,
    y_ub: f64,
    scope: CutScope,
) -> Result<[Cut; 4], CutError> {
    if !(x_lb.is_finite() && x_ub.is_finite() && y_lb.is_finite() && y_ub.is_finite()) {
        return Err(CutError::UnboundedBox);
    }
    let cut = |cx: f64, cy: f64, rhs: f64, sense: Sense| Cut {
        terms: vec![(w, 1.0), (x, -cx), (y, -cy)],
        sense,
        rhs,
        provenance: Provenance::Duality,
        scope,
    };
    Ok([
        // w ≥ x̲·y + y̲·x − x̲·y̲
        cut(y_lb, x_lb, -x_lb * y_lb, Sense::Ge),
        // w ≥ x̄·y + ȳ·x − x̄·ȳ
        cut(y_ub, x_ub, -x_ub * y_ub, Sense::Ge),
        // w ≤ x̲·y + ȳ·x − x̲·ȳ
        cut(y_ub, x_lb, -x_lb * y_ub, Sense::Le),
        // w ≤ x̄·y + y̲·x − x̄·y̲
        cut(y_lb, x_ub, -x_ub * y_lb, Sense::Le),
    ])
}

// ---------------------------------------------------------------------------
// duality-based inequalities

/// How the work terms of the duality inequality are linearized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DualityMode {
    /// Tangent epigraph cuts at the partition breakpoints.
    Tangents,
    /// Tangent cuts plus interpolation ties through the piecewise
    /// convex-combination variables (requires a piecewise model).
    SharedPiecewise,
}

/// Auxiliary variable demanded by the duality cuts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxVar {
    pub key: VarKey,
    pub lb: f64,
    pub ub: f64,
}

/// The duality cut family for one bounds/partition configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DualityCutSet {
    pub aux: Vec<AuxVar>,
    pub cuts: Vec<Cut>,
}

impl DualityCutSet {
    /// Adds the auxiliary variables and all cuts to a model.
    pub fn apply(&self, model: &mut MilpModel) -> Result<(), ModelError> {
        for aux in &self.aux {
            model.add_variable(aux.key, aux.lb, aux.ub, VarKind::Continuous)?;
        }
        apply_cuts(model, &self.cuts)
    }
}

/// Energy-conservation inequalities per step: linearized frictional work plus
/// pump work, net of boundary production and consumption, is nonpositive.
/// Tank head–flow products are McCormick-relaxed; the nonlinear work terms
/// are under-approximated by tangents at the partition breakpoints.
pub fn duality_cuts(
    instance: &Instance,
    bounds: &BoundsStore,
    partition: &Partition,
    mode: DualityMode,
) -> Result<DualityCutSet, CutError> {
    let mut set = DualityCutSet::default();
    for k in 0..instance.horizon() {
        let mut main_terms: Vec<(VarKey, f64)> = Vec::new();

        for (l, link) in instance.links.iter().enumerate() {
            match &link.kind {
                LinkKind::Pipe(p) => {
                    let coef = p.length * p.resistance;
                    let e = p.exponent;
                    for dir in Dir::BOTH {
                        let points = partition.get(l, k, dir).ok_or(CutError::MissingPartition(l))?;
                        let (_, dir_ub) = bounds.dir(l, k, dir);
                        let phi = VarKey::PipeWorkEpi { link: l, k, dir };
                        set.aux.push(AuxVar { key: phi, lb: 0.0, ub: coef * dir_ub.powf(1.0 + e) });
                        let q = VarKey::DirFlow { link: l, k, dir };
                        for &qh in points {
                            // φ ≥ Lr[(1+α)·q̂^α·q± − α·q̂^(1+α)·y±]
                            let mut terms = vec![(phi, 1.0), (q, -coef * (1.0 + e) * qh.powf(e))];
                            let mut rhs = 0.0;
                            let ycoef = coef * e * qh.powf(1.0 + e);
                            add_dir_indicator(&mut terms, &mut rhs, l, k, dir, ycoef);
                            set.cuts.push(Cut { terms, sense: Sense::Ge, rhs, provenance: Provenance::Duality, scope: CutScope::Step(k) });
                        }
                        if mode == DualityMode::SharedPiecewise {
                            // φ ≤ Σ Lr·q̂^(1+α)·λ, tying the epigraph to the
                            // active piecewise interval
                            let mut terms = vec![(phi, 1.0)];
                            for (p_idx, &qh) in points.iter().enumerate() {
                                terms.push((
                                    VarKey::ConvexWeight { link: l, k, dir, p: p_idx },
                                    -coef * qh.powf(1.0 + e),
                                ));
                            }
                            set.cuts.push(Cut { terms, sense: Sense::Le, rhs: 0.0, provenance: Provenance::Duality, scope: CutScope::Step(k) });
                        }
                        main_terms.push((phi, 1.0));
                    }
                }
                LinkKind::Pump(p) => {
                    let points = partition.get(l, k, Dir::Pos).ok_or(CutError::MissingPartition(l))?;
                    let (a, b, c) = (p.gain_a, p.gain_b, p.gain_c);
                    let (_, qmax) = bounds.dir(l, k, Dir::Pos);
                    let work = |q: f64| -(a * q + b * q.powf(c + 1.0));
                    // the pump work is convex; its minimum sits at the
                    // stationary point of −a·q − b·q^(c+1)
                    let q_star = (a / (-b * (c + 1.0))).powf(1.0 / c).clamp(0.0, qmax);
                    let lb = work(q_star).min(0.0);
                    let ub = work(qmax).max(0.0);
                    let psi = VarKey::PumpWorkEpi { link: l, k };
                    set.aux.push(AuxVar { key: psi, lb, ub });
                    let q = VarKey::DirFlow { link: l, k, dir: Dir::Pos };
                    let z = VarKey::Status { link: l, k };
                    for &qh in points {
                        // ψ ≥ −a·q⁺ − b(c+1)·q̂^c·q⁺ + b·c·q̂^(c+1)·z
                        set.cuts.push(Cut {
                            terms: vec![
                                (psi, 1.0),
                                (q, a + b * (c + 1.0) * qh.powf(c)),
                                (z, -b * c * qh.powf(c + 1.0)),
                            ],
                            sense: Sense::Ge,
                            rhs: 0.0,
                            provenance: Provenance::Duality,
                            scope: CutScope::Step(k),
                        });
                    }
                    if mode == DualityMode::SharedPiecewise {
                        let mut terms = vec![(psi, 1.0)];
                        for (p_idx, &qh) in points.iter().enumerate() {
                            terms.push((VarKey::ConvexWeight { link: l, k, dir: Dir::Pos, p: p_idx }, -work(qh)));
                        }
                        set.cuts.push(Cut { terms, sense: Sense::Le, rhs: 0.0, provenance: Provenance::Duality, scope: CutScope::Step(k) });
                    }
                    main_terms.push((psi, 1.0));
                }
                LinkKind::Valve => {}
            }
        }

        for (n, node) in instance.nodes.iter().enumerate() {
            match &node.kind {
                NodeKind::Tank(tank) => {
                    let (h_lb, h_ub) = bounds.head(n, k);
                    let (q_lb, q_ub) = (tank.flow_lb[k], tank.flow_ub[k]);
                    let corners = [q_lb * h_lb, q_lb * h_ub, q_ub * h_lb, q_ub * h_ub];
                    let w = VarKey::TankProduct { node: n, k };
                    set.aux.push(AuxVar {
                        key: w,
                        lb: corners.iter().cloned().fold(f64::INFINITY, f64::min),
                        ub: corners.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                    });
                    let envelope = mccormick(
                        w,
                        VarKey::TankFlow { node: n, k },
                        VarKey::Head { node: n, k },
                        q_lb,
                        q_ub,
                        h_lb,
                        h_ub,
                        CutScope::Step(k),
                    )?;
                    set.cuts.extend(envelope);
                    main_terms.push((w, -1.0));
                }
                NodeKind::Reservoir => {
                    // reservoir heads are fixed, so the production term stays
                    // linear in the directed flows
                    let head = bounds.head(n, k).0;
                    for (l, link) in instance.links.iter().enumerate() {
                        let sign = if link.tail == n {
                            1.0
                        } else if link.head == n {
                            -1.0
                        } else {
                            continue;
                        };
                        main_terms.push((VarKey::DirFlow { link: l, k, dir: Dir::Pos }, -head * sign));
                        main_terms.push((VarKey::DirFlow { link: l, k, dir: Dir::Neg }, head * sign));
                    }
                }
                NodeKind::Demand(d) => {
                    main_terms.push((VarKey::Head { node: n, k }, -d.rate[k]));
                }
            }
        }

        // merge duplicate keys for cleanliness
        let mut merged: std::collections::BTreeMap<VarKey, f64> = std::collections::BTreeMap::new();
        for (key, c) in main_terms {
            *merged.entry(key).or_insert(0.0) += c;
        }
        set.cuts.push(Cut {
            terms: merged.into_iter().filter(|&(_, c)| c != 0.0).collect(),
            sense: Sense::Le,
            rhs: 0.0,
            provenance: Provenance::Duality,
            scope: CutScope::Step(k),
        });
    }
    Ok(set)
}

fn add_dir_indicator(terms: &mut Vec<(VarKey, f64)>, rhs: &mut f64, link: usize, k: usize, dir: Dir, coef: f64) {
    match dir {
        Dir::Pos => terms.push((VarKey::Direction { link, k }, coef)),
        Dir::Neg => {
            terms.push((VarKey::Direction { link, k }, -coef));
            *rhs -= coef;
        }
    }
}

// ---------------------------------------------------------------------------
// combinatorial no-good cuts

/// Excludes exactly one status prefix: at least one pump/valve status over
/// steps `1..=k_inf` (1-based) must differ from the given assignment.
pub fn no_good_cut(
    instance: &Instance,
    prefix: &[ControlState],
    k_inf: usize,
) -> Result<Cut, CutError> {
    if k_inf == 0 || prefix.is_empty() || instance.controllable_indices().is_empty() {
        return Err(CutError::EmptyPrefix);
    }
    // Σ_{ẑ=0} z − Σ_{ẑ=1} (1 − z) ≥ 1
    let depth = k_inf.min(prefix.len());
    let mut terms = Vec::new();
    let mut rhs = 1.0;
    for (k, state) in prefix.iter().take(depth).enumerate() {
        for (link, z) in state.entries() {
            if z {
                terms.push((VarKey::Status { link, k }, -1.0));
                rhs -= 1.0;
            } else {
                terms.push((VarKey::Status { link, k }, 1.0));
            }
        }
    }
    Ok(Cut { terms, sense: Sense::Ge, rhs, provenance: Provenance::NoGood, scope: CutScope::Global })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use std::collections::BTreeMap;

    #[test]
    fn symmetry_cut_counts() {
        let three = fixtures::parallel_pumps_instance(3, 1);
        let cuts = symmetry_cuts(&three);
        assert_eq!(cuts.len(), 2);

        let none = fixtures::pump_tank_instance(2);
        assert!(symmetry_cuts(&none).is_empty());

        let two = fixtures::parallel_pumps_instance(2, 24);
        assert_eq!(symmetry_cuts(&two).len(), 24);
    }

    #[test]
    fn symmetry_cuts_admit_exactly_n_plus_one_patterns() {
        let inst = fixtures::parallel_pumps_instance(3, 1);
        let cuts = symmetry_cuts(&inst);
        let pumps = inst.pump_indices();
        let mut admitted = 0;
        for mask in 0..8u32 {
            let z = |l: usize| -> f64 {
                let pos = pumps.iter().position(|&p| p == l).unwrap();
                ((mask >> pos) & 1) as f64
            };
            let ok = cuts.iter().all(|cut| {
                let lhs: f64 = cut.terms.iter().map(|&(key, c)| match key {
                    VarKey::Status { link, .. } => c * z(link),
                    _ => 0.0,
                }).sum();
                lhs <= cut.rhs + 1e-12
            });
            if ok {
                admitted += 1;
            }
        }
        assert_eq!(admitted, 4);
    }

    #[test]
    fn direction_vi_forms() {
        // reservoir with two outgoing links: y1 + y2 ≥ 1
        let mut b = fixtures::InstanceBuilder::new(vec![60.0]);
        let r = b.reservoir("r", 20.0);
        let d1 = b.demand("d1", vec![-0.1], 0.0, 30.0);
        let d2 = b.demand("d2", vec![-0.1], 0.0, 30.0);
        b.pipe("p1", r, d1, 10.0, 0.01, 1.0);
        b.pipe("p2", r, d2, 10.0, 0.01, 1.0);
        let inst = b.build();
        let cuts = direction_vis(&inst);
        let source = cuts
            .iter()
            .find(|c| c.sense == Sense::Ge && c.rhs == 1.0 && c.terms.len() == 2)
            .expect("source cut");
        assert!(source.terms.iter().all(|&(_, c)| c == 1.0));

        // consuming demand with one in, one out: y_in + (1 − y_out) ≥ 1
        let mut b = fixtures::InstanceBuilder::new(vec![60.0]);
        let r = b.reservoir("r", 20.0);
        let d = b.demand("d", vec![-0.1], 0.0, 30.0);
        let s = b.demand("s", vec![0.1], 0.0, 30.0);
        b.pipe("in", r, d, 10.0, 0.01, 1.0);
        b.pipe("out", d, s, 10.0, 0.01, 1.0);
        let inst = b.build();
        let cuts = direction_vis(&inst);
        let demand_cut = cuts
            .iter()
            .find(|c| {
                c.terms.iter().any(|&(key, c2)| matches!(key, VarKey::Direction { link: 0, .. }) && c2 == 1.0)
                    && c.terms.iter().any(|&(key, c2)| matches!(key, VarKey::Direction { link: 1, .. }) && c2 == -1.0)
            })
            .expect("demand cut");
        assert_eq!(demand_cut.rhs, 0.0);

        // pass-through junction: y_in = y_out
        let inst = fixtures::valve_junction_instance(1);
        let cuts = direction_vis(&inst);
        assert!(cuts.iter().any(|c| c.sense == Sense::Eq && c.rhs == 0.0));
    }

    #[test]
    fn mccormick_examples() {
        let w = VarKey::TankProduct { node: 0, k: 0 };
        let x = VarKey::TankFlow { node: 0, k: 0 };
        let y = VarKey::Head { node: 0, k: 0 };

        // corner point is pinned exactly
        let cuts = mccormick(w, x, y, 0.0, 1.0, 10.0, 20.0, CutScope::Step(0)).unwrap();
        let eval = |cut: &Cut, wv: f64, xv: f64, yv: f64| -> f64 {
            let mut lhs = 0.0;
            for &(key, c) in &cut.terms {
                lhs += c * if key == w { wv } else if key == x { xv } else { yv };
            }
            match cut.sense {
                Sense::Ge => lhs - cut.rhs,
                Sense::Le => cut.rhs - lhs,
                Sense::Eq => -(lhs - cut.rhs).abs(),
            }
        };
        // at (x,y) = (1,20) the envelope forces w = 20
        for wv in [19.0, 21.0] {
            assert!(cuts.iter().any(|c| eval(c, wv, 1.0, 20.0) < -1e-9), "w={wv} not cut");
        }
        assert!(cuts.iter().all(|c| eval(c, 20.0, 1.0, 20.0) >= -1e-9));

        // degenerate x-box collapses to w = c·y
        let cuts = mccormick(w, x, y, 0.5, 0.5, -1.0, 1.0, CutScope::Step(0)).unwrap();
        for yv in [-1.0, -0.25, 0.6, 1.0] {
            assert!(cuts.iter().all(|c| eval(c, 0.5 * yv, 0.5, yv) >= -1e-9));
            assert!(cuts.iter().any(|c| eval(c, 0.5 * yv + 0.1, 0.5, yv) < -1e-9));
        }

        // interior sample keeps the true product inside
        let cuts = mccormick(w, x, y, 0.0, 2.0, -1.0, 1.0, CutScope::Step(0)).unwrap();
        assert!(cuts.iter().all(|c| eval(c, 0.0, 1.0, 0.0) >= -1e-9));
        assert!(cuts.iter().all(|c| eval(c, -1.0, 1.0, 0.0) >= -1e-9));
        assert!(cuts.iter().all(|c| eval(c, 1.0, 1.0, 0.0) >= -1e-9));
        assert!(cuts.iter().any(|c| eval(c, 1.5, 1.0, 0.0) < -1e-9));
        assert!(cuts.iter().any(|c| eval(c, -1.5, 1.0, 0.0) < -1e-9));

        assert!(mccormick(w, x, y, f64::NEG_INFINITY, 1.0, 0.0, 1.0, CutScope::Global).is_err());
    }

    #[test]
    fn no_good_cut_forms() {
        let inst = fixtures::pump_tank_instance(2);
        let pump = inst.pump_indices()[0];

        // single pump on: z ≤ 0
        let mut on = BTreeMap::new();
        on.insert(pump, true);
        let state = ControlState::new(&inst, on).unwrap();
        let cut = no_good_cut(&inst, &[state.clone()], 1).unwrap();
        assert_eq!(cut.sense, Sense::Ge);
        assert_eq!(cut.rhs, 0.0);
        assert_eq!(cut.terms, vec![(VarKey::Status { link: pump, k: 0 }, -1.0)]);

        // single pump off: z ≥ 1
        let mut off = BTreeMap::new();
        off.insert(pump, false);
        let state_off = ControlState::new(&inst, off).unwrap();
        let cut = no_good_cut(&inst, &[state_off], 1).unwrap();
        assert_eq!(cut.rhs, 1.0);
        assert_eq!(cut.terms, vec![(VarKey::Status { link: pump, k: 0 }, 1.0)]);

        assert!(no_good_cut(&inst, &[], 1).is_err());
    }

    #[test]
    fn no_good_cut_excludes_exactly_the_prefix() {
        let inst = fixtures::parallel_pumps_instance(2, 2);
        let pumps = inst.pump_indices();
        // prefix ẑ = (1, 0) at step 1
        let mut map = BTreeMap::new();
        map.insert(pumps[0], true);
        map.insert(pumps[1], false);
        let state = ControlState::new(&inst, map).unwrap();
        let cut = no_good_cut(&inst, &[state], 1).unwrap();
        let mut excluded = 0;
        for mask in 0..4u32 {
            let z = |l: usize| -> f64 {
                let pos = pumps.iter().position(|&p| p == l).unwrap();
                ((mask >> pos) & 1) as f64
            };
            let lhs: f64 = cut.terms.iter().map(|&(key, c)| match key {
                VarKey::Status { link, .. } => c * z(link),
                _ => 0.0,
            }).sum();
            if lhs < cut.rhs - 1e-12 {
                excluded += 1;
                assert_eq!(z(pumps[0]), 1.0);
                assert_eq!(z(pumps[1]), 0.0);
            }
        }
        assert_eq!(excluded, 1);
    }
}

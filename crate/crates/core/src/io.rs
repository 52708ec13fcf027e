//! Loading and saving: instance documents, price profiles, schedules, and
//! result documents. All formats are JSON-shaped UTF-8 text with a mandatory
//! schema version; price profiles are `time,energy_price` CSV.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hydraulics::Schedule;
use crate::network::{
    Demand, Instance, Link, LinkKind, Node, NodeKind, Pipe, Pump, Tank, Violation,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported schema version {0}")]
    SchemaVersion(u32),
    #[error("instance failed validation: {}", summarize(.0))]
    Validation(Vec<Violation>),
    #[error("unknown node id `{0}` referenced by link `{1}`")]
    UnknownNode(String, String),
    #[error("prices reference an external profile `{0}`; resolve it first")]
    UnresolvedPriceProfile(String),
    #[error("pump `{0}` has no price data")]
    MissingPrices(String),
    #[error("price profile: {0}")]
    PriceProfile(String),
    #[error("schedule: {0}")]
    Schedule(String),
}

fn summarize(violations: &[Violation]) -> String {
    violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

// ---------------------------------------------------------------------------
// instance documents

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceDocument {
    pub schema_version: u32,
    pub horizon: HorizonSection,
    pub network: NetworkSection,
    pub prices: PricesSection,
    #[serde(default)]
    pub switching: BTreeMap<String, SwitchingEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonSection {
    pub step_durations_s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSection {
    pub nodes: Vec<NodeDocument>,
    pub links: Vec<LinkDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeDocument {
    Reservoir {
        id: String,
        head_m: Vec<f64>,
    },
    Demand {
        id: String,
        rate_m3s: Vec<f64>,
        head_min_m: Vec<f64>,
        head_max_m: Vec<f64>,
    },
    Tank {
        id: String,
        diameter_m: f64,
        bottom_m: f64,
        initial_volume_m3: f64,
        head_min_m: Vec<f64>,
        head_max_m: Vec<f64>,
        outflow_min_m3s: Vec<f64>,
        outflow_max_m3s: Vec<f64>,
    },
}

impl NodeDocument {
    pub fn id(&self) -> &str {
        match self {
            NodeDocument::Reservoir { id, .. }
            | NodeDocument::Demand { id, .. }
            | NodeDocument::Tank { id, .. } => id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinkDocument {
    Pipe {
        id: String,
        tail: String,
        head: String,
        length_m: f64,
        resistance: f64,
        exponent: f64,
        flow_min_m3s: Vec<f64>,
        flow_max_m3s: Vec<f64>,
    },
    Pump {
        id: String,
        tail: String,
        head: String,
        gain_a: f64,
        gain_b: f64,
        gain_c: f64,
        flow_max_m3s: Vec<f64>,
        #[serde(default)]
        min_active_flow_m3s: Option<Vec<f64>>,
        #[serde(default)]
        symmetry_group: Option<String>,
    },
    Valve {
        id: String,
        tail: String,
        head: String,
        flow_min_m3s: Vec<f64>,
        flow_max_m3s: Vec<f64>,
    },
}

impl LinkDocument {
    pub fn id(&self) -> &str {
        match self {
            LinkDocument::Pipe { id, .. }
            | LinkDocument::Pump { id, .. }
            | LinkDocument::Valve { id, .. } => id,
        }
    }
}

/// Pump cost coefficients: either explicit per-pump λ/μ matrices or a
/// reference to a shared `time,energy_price` CSV combined with per-pump
/// power coefficients (`λ = price·flow_coefficient`,
/// `μ = price·status_coefficient`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PricesSection {
    Explicit {
        energy: BTreeMap<String, Vec<f64>>,
        activation: BTreeMap<String, Vec<f64>>,
    },
    Profile {
        profile_csv: String,
        pump_coefficients: BTreeMap<String, PumpPowerCoefficients>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PumpPowerCoefficients {
    pub flow: f64,
    pub status: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchingEntry {
    pub min_on_s: f64,
    pub min_off_s: f64,
    pub max_starts: u32,
}

/// Parses an instance document without constructing the instance.
pub fn parse_document(text: &str) -> Result<InstanceDocument, IoError> {
    let doc: InstanceDocument = serde_json::from_str(text)?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(IoError::SchemaVersion(doc.schema_version));
    }
    Ok(doc)
}

/// Renders a document deterministically; `parse_document(render(d)) == d`.
pub fn render_document(doc: &InstanceDocument) -> String {
    serde_json::to_string_pretty(doc).expect("document serialization")
}

/// Loads an instance from document text with embedded prices.
pub fn load_instance(text: &str) -> Result<Instance, IoError> {
    let doc = parse_document(text)?;
    instance_from_document(&doc, None)
}

/// Loads an instance whose prices may reference an external CSV profile;
/// `resolve` maps the reference string to the CSV text.
pub fn load_instance_with(
    text: &str,
    resolve: impl FnOnce(&str) -> Result<String, IoError>,
) -> Result<Instance, IoError> {
    let doc = parse_document(text)?;
    match &doc.prices {
        PricesSection::Explicit { .. } => instance_from_document(&doc, None),
        PricesSection::Profile { profile_csv, .. } => {
            let csv = resolve(profile_csv)?;
            let profile = load_price_profile(&csv, doc.horizon.step_durations_s.len())?;
            instance_from_document(&doc, Some(&profile))
        }
    }
}

/// Builds and validates the instance described by a document.
pub fn instance_from_document(
    doc: &InstanceDocument,
    profile: Option<&[f64]>,
) -> Result<Instance, IoError> {
    let horizon = doc.horizon.step_durations_s.len();
    let mut nodes = Vec::new();
    for nd in &doc.network.nodes {
        nodes.push(match nd {
            NodeDocument::Reservoir { id, head_m } => Node {
                id: id.clone(),
                kind: NodeKind::Reservoir,
                head_lb: head_m.clone(),
                head_ub: head_m.clone(),
            },
            NodeDocument::Demand { id, rate_m3s, head_min_m, head_max_m } => Node {
                id: id.clone(),
                kind: NodeKind::Demand(Demand { rate: rate_m3s.clone() }),
                head_lb: head_min_m.clone(),
                head_ub: head_max_m.clone(),
            },
            NodeDocument::Tank {
                id,
                diameter_m,
                bottom_m,
                initial_volume_m3,
                head_min_m,
                head_max_m,
                outflow_min_m3s,
                outflow_max_m3s,
            } => Node {
                id: id.clone(),
                kind: NodeKind::Tank(Tank {
                    diameter: *diameter_m,
                    bottom: *bottom_m,
                    initial_volume: *initial_volume_m3,
                    flow_lb: outflow_min_m3s.clone(),
                    flow_ub: outflow_max_m3s.clone(),
                }),
                head_lb: head_min_m.clone(),
                head_ub: head_max_m.clone(),
            },
        });
    }

    let node_idx = |id: &str, link: &str| -> Result<usize, IoError> {
        nodes
            .iter()
            .position(|n: &Node| n.id == id)
            .ok_or_else(|| IoError::UnknownNode(id.to_string(), link.to_string()))
    };

    let pump_prices = |id: &str| -> Result<(Vec<f64>, Vec<f64>), IoError> {
        match &doc.prices {
            PricesSection::Explicit { energy, activation } => {
                let e = energy.get(id).ok_or_else(|| IoError::MissingPrices(id.to_string()))?;
                let a = activation.get(id).ok_or_else(|| IoError::MissingPrices(id.to_string()))?;
                Ok((e.clone(), a.clone()))
            }
            PricesSection::Profile { profile_csv, pump_coefficients } => {
                let profile = profile
                    .ok_or_else(|| IoError::UnresolvedPriceProfile(profile_csv.clone()))?;
                let coef = pump_coefficients
                    .get(id)
                    .ok_or_else(|| IoError::MissingPrices(id.to_string()))?;
                Ok((
                    profile.iter().map(|p| p * coef.flow).collect(),
                    profile.iter().map(|p| p * coef.status).collect(),
                ))
            }
        }
    };

    let mut links = Vec::new();
    for ld in &doc.network.links {
        let link = match ld {
            LinkDocument::Pipe { id, tail, head, length_m, resistance, exponent, flow_min_m3s, flow_max_m3s } => Link {
                id: id.clone(),
                tail: node_idx(tail, id)?,
                head: node_idx(head, id)?,
                kind: LinkKind::Pipe(Pipe { length: *length_m, resistance: *resistance, exponent: *exponent }),
                flow_lb: flow_min_m3s.clone(),
                flow_ub: flow_max_m3s.clone(),
                dir_flow_lb_pos: vec![0.0; horizon],
                dir_flow_lb_neg: vec![0.0; horizon],
            },
            LinkDocument::Pump { id, tail, head, gain_a, gain_b, gain_c, flow_max_m3s, min_active_flow_m3s, symmetry_group } => {
                let (energy_cost, activation_cost) = pump_prices(id)?;
                let switching = doc.switching.get(id).cloned().unwrap_or(SwitchingEntry {
                    min_on_s: 0.0,
                    min_off_s: 0.0,
                    max_starts: u32::MAX,
                });
                Link {
                    id: id.clone(),
                    tail: node_idx(tail, id)?,
                    head: node_idx(head, id)?,
                    kind: LinkKind::Pump(Pump {
                        gain_a: *gain_a,
                        gain_b: *gain_b,
                        gain_c: *gain_c,
                        energy_cost,
                        activation_cost,
                        min_on_secs: switching.min_on_s,
                        min_off_secs: switching.min_off_s,
                        max_starts: switching.max_starts,
                        symmetry_group: symmetry_group.clone(),
                    }),
                    flow_lb: vec![0.0; horizon],
                    flow_ub: flow_max_m3s.clone(),
                    dir_flow_lb_pos: min_active_flow_m3s.clone().unwrap_or_else(|| vec![0.0; horizon]),
                    dir_flow_lb_neg: vec![0.0; horizon],
                }
            }
            LinkDocument::Valve { id, tail, head, flow_min_m3s, flow_max_m3s } => Link {
                id: id.clone(),
                tail: node_idx(tail, id)?,
                head: node_idx(head, id)?,
                kind: LinkKind::Valve,
                flow_lb: flow_min_m3s.clone(),
                flow_ub: flow_max_m3s.clone(),
                dir_flow_lb_pos: vec![0.0; horizon],
                dir_flow_lb_neg: vec![0.0; horizon],
            },
        };
        links.push(link);
    }

    let instance = Instance { nodes, links, dt: doc.horizon.step_durations_s.clone() };
    let report = instance.validate();
    if !report.passed() {
        return Err(IoError::Validation(report.violations));
    }
    Ok(instance)
}

/// Renders an instance back into a document with explicit prices.
pub fn document_from_instance(instance: &Instance) -> InstanceDocument {
    let mut nodes = Vec::new();
    for n in &instance.nodes {
        nodes.push(match &n.kind {
            NodeKind::Reservoir => NodeDocument::Reservoir { id: n.id.clone(), head_m: n.head_lb.clone() },
            NodeKind::Demand(d) => NodeDocument::Demand {
                id: n.id.clone(),
                rate_m3s: d.rate.clone(),
                head_min_m: n.head_lb.clone(),
                head_max_m: n.head_ub.clone(),
            },
            NodeKind::Tank(t) => NodeDocument::Tank {
                id: n.id.clone(),
                diameter_m: t.diameter,
                bottom_m: t.bottom,
                initial_volume_m3: t.initial_volume,
                head_min_m: n.head_lb.clone(),
                head_max_m: n.head_ub.clone(),
                outflow_min_m3s: t.flow_lb.clone(),
                outflow_max_m3s: t.flow_ub.clone(),
            },
        });
    }
    let mut links = Vec::new();
    let mut energy = BTreeMap::new();
    let mut activation = BTreeMap::new();
    let mut switching = BTreeMap::new();
    for l in &instance.links {
        let tail = instance.nodes[l.tail].id.clone();
        let head = instance.nodes[l.head].id.clone();
        links.push(match &l.kind {
            LinkKind::Pipe(p) => LinkDocument::Pipe {
                id: l.id.clone(),
                tail,
                head,
                length_m: p.length,
                resistance: p.resistance,
                exponent: p.exponent,
                flow_min_m3s: l.flow_lb.clone(),
                flow_max_m3s: l.flow_ub.clone(),
            },
            LinkKind::Pump(p) => {
                energy.insert(l.id.clone(), p.energy_cost.clone());
                activation.insert(l.id.clone(), p.activation_cost.clone());
                switching.insert(
                    l.id.clone(),
                    SwitchingEntry {
                        min_on_s: p.min_on_secs,
                        min_off_s: p.min_off_secs,
                        max_starts: p.max_starts,
                    },
                );
                LinkDocument::Pump {
                    id: l.id.clone(),
                    tail,
                    head,
                    gain_a: p.gain_a,
                    gain_b: p.gain_b,
                    gain_c: p.gain_c,
                    flow_max_m3s: l.flow_ub.clone(),
                    min_active_flow_m3s: Some(l.dir_flow_lb_pos.clone()),
                    symmetry_group: p.symmetry_group.clone(),
                }
            }
            LinkKind::Valve => LinkDocument::Valve {
                id: l.id.clone(),
                tail,
                head,
                flow_min_m3s: l.flow_lb.clone(),
                flow_max_m3s: l.flow_ub.clone(),
            },
        });
    }
    InstanceDocument {
        schema_version: SCHEMA_VERSION,
        horizon: HorizonSection { step_durations_s: instance.dt.clone() },
        network: NetworkSection { nodes, links },
        prices: PricesSection::Explicit { energy, activation },
        switching,
    }
}

// ---------------------------------------------------------------------------
// price profiles

/// Parses a `time,energy_price` CSV into a per-step price vector.
///
/// Times must be strictly increasing and the row count must match the
/// horizon length.
pub fn load_price_profile(csv_text: &str, expected_len: usize) -> Result<Vec<f64>, IoError> {
    let mut lines = csv_text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| IoError::PriceProfile("empty file".into()))?;
    let cols: Vec<&str> = header.split(',').map(|c| c.trim()).collect();
    if cols != ["time", "energy_price"] {
        return Err(IoError::PriceProfile(format!("expected header `time,energy_price`, got `{header}`")));
    }
    let mut prices = Vec::new();
    let mut last_time = f64::NEG_INFINITY;
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(|c| c.trim()).collect();
        if fields.len() != 2 {
            return Err(IoError::PriceProfile(format!("row {}: expected 2 fields", i + 2)));
        }
        let time: f64 = fields[0]
            .parse()
            .map_err(|_| IoError::PriceProfile(format!("row {}: bad time `{}`", i + 2, fields[0])))?;
        let price: f64 = fields[1]
            .parse()
            .map_err(|_| IoError::PriceProfile(format!("row {}: bad price `{}`", i + 2, fields[1])))?;
        if time <= last_time {
            return Err(IoError::PriceProfile(format!("row {}: time column must be strictly increasing", i + 2)));
        }
        last_time = time;
        prices.push(price);
    }
    if prices.len() != expected_len {
        return Err(IoError::PriceProfile(format!("expected {expected_len} rows, got {}", prices.len())));
    }
    Ok(prices)
}

// ---------------------------------------------------------------------------
// schedules

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDocument {
    pub schema_version: u32,
    /// Per-link status vectors (1 = on/open), keyed by link id.
    pub statuses: BTreeMap<String, Vec<u8>>,
}

pub fn schedule_to_document(instance: &Instance, schedule: &Schedule) -> ScheduleDocument {
    let statuses = schedule
        .to_status_map(instance)
        .into_iter()
        .map(|(id, bits)| (id, bits.into_iter().map(u8::from).collect()))
        .collect();
    ScheduleDocument { schema_version: SCHEMA_VERSION, statuses }
}

pub fn load_schedule(instance: &Instance, text: &str) -> Result<Schedule, IoError> {
    let doc: ScheduleDocument = serde_json::from_str(text)?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(IoError::SchemaVersion(doc.schema_version));
    }
    let map: BTreeMap<String, Vec<bool>> = doc
        .statuses
        .into_iter()
        .map(|(id, bits)| (id, bits.into_iter().map(|b| b != 0).collect()))
        .collect();
    Schedule::from_status_map(instance, &map).map_err(|e| IoError::Schedule(e.to_string()))
}

// ---------------------------------------------------------------------------
// result documents

/// A bound that may be absent (no incumbent / no certificate). Serialized as
/// a number or `"-"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoundField {
    Value(f64),
    Dash(DashMarker),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DashMarker {
    #[serde(rename = "-")]
    Dash,
}

impl BoundField {
    pub fn from_option(v: Option<f64>) -> Self {
        match v {
            Some(x) => BoundField::Value(x),
            None => BoundField::Dash(DashMarker::Dash),
        }
    }
    pub fn value(&self) -> Option<f64> {
        match self {
            BoundField::Value(x) => Some(*x),
            BoundField::Dash(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub schema_version: u32,
    pub lower_bound: BoundField,
    pub upper_bound: BoundField,
    /// Relative gap `(UB − LB)/UB`, or `"-"` when no incumbent exists.
    pub gap: BoundField,
    pub wall_time_s: f64,
    pub termination: String,
    #[serde(default)]
    pub nodes_explored: u64,
    #[serde(default)]
    pub schedule: Option<ScheduleDocument>,
    /// Per-tank volume trajectories over `0..=K`, keyed by node id.
    #[serde(default)]
    pub tank_trajectories: BTreeMap<String, Vec<f64>>,
    /// `100·(f₂ − f₁)/f₁` against a supplied baseline bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_improvement_pct: Option<f64>,
}

impl ResultDocument {
    /// Fills the improvement field from a baseline bound `f₁` against this
    /// document's lower bound `f₂`.
    pub fn with_baseline(mut self, baseline: f64) -> Self {
        if let Some(f2) = self.lower_bound.value() {
            self.baseline_improvement_pct = Some(improvement_pct(baseline, f2));
        }
        self
    }
}

/// The bound-improvement metric `100·(f₂ − f₁)/f₁`.
pub fn improvement_pct(f1: f64, f2: f64) -> f64 {
    100.0 * (f2 - f1) / f1
}

/// Deterministic serialization; `load_result(write_result(r)) == r`.
pub fn write_result(result: &ResultDocument) -> String {
    serde_json::to_string_pretty(result).expect("result serialization")
}

pub fn load_result(text: &str) -> Result<ResultDocument, IoError> {
    let doc: ResultDocument = serde_json::from_str(text)?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(IoError::SchemaVersion(doc.schema_version));
    }
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn minimal_document_round_trips() {
        let inst = fixtures::single_pipe_instance();
        let doc = document_from_instance(&inst);
        let text = render_document(&doc);
        let parsed = parse_document(&text).unwrap();
        assert_eq!(doc, parsed);
        let rebuilt = instance_from_document(&parsed, None).unwrap();
        assert_eq!(rebuilt.nodes.len(), 2);
        assert_eq!(rebuilt.links.len(), 1);
        assert_eq!(rebuilt, inst);
    }

    #[test]
    fn loader_rejects_duplicate_node_id() {
        let inst = fixtures::single_pipe_instance();
        let mut doc = document_from_instance(&inst);
        let dup = doc.network.nodes[0].clone();
        doc.network.nodes.push(dup);
        let err = load_instance(&render_document(&doc)).unwrap_err();
        match err {
            IoError::Validation(violations) => {
                assert!(violations.iter().any(|v| v.entity == "res"));
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn loader_reports_parse_context() {
        let err = load_instance("{ not json").unwrap_err();
        assert!(err.to_string().contains("parse error"));
    }

    #[test]
    fn fixtures_round_trip_through_documents() {
        for inst in fixtures::oracle_instances() {
            let doc = document_from_instance(&inst);
            let text = render_document(&doc);
            let again = load_instance(&text).unwrap();
            assert_eq!(inst, again);
        }
    }

    #[test]
    fn price_profile_parses_hourly_rows() {
        let mut csv = String::from("time,energy_price\n");
        for k in 0..24 {
            csv.push_str(&format!("{},{}\n", k * 3600, 10.0 + k as f64));
        }
        let prices = load_price_profile(&csv, 24).unwrap();
        assert_eq!(prices.len(), 24);
        assert_eq!(prices[3], 13.0);
    }

    #[test]
    fn price_profile_rejects_disorder_and_length() {
        let csv = "time,energy_price\n0,1.0\n7200,2.0\n3600,3.0\n";
        assert!(load_price_profile(csv, 3).is_err());
        let csv = "time,energy_price\n0,1.0\n3600,2.0\n";
        assert!(load_price_profile(csv, 24).is_err());
    }

    #[test]
    fn profile_reference_resolves_through_loader() {
        let inst = fixtures::pump_tank_instance(2);
        let mut doc = document_from_instance(&inst);
        let mut coefs = BTreeMap::new();
        coefs.insert("lift".to_string(), PumpPowerCoefficients { flow: 2.0, status: 0.5 });
        doc.prices = PricesSection::Profile { profile_csv: "prices.csv".into(), pump_coefficients: coefs };
        let text = render_document(&doc);

        assert!(matches!(load_instance(&text), Err(IoError::UnresolvedPriceProfile(_))));

        let loaded = load_instance_with(&text, |name| {
            assert_eq!(name, "prices.csv");
            Ok("time,energy_price\n0,10\n60,30\n".to_string())
        })
        .unwrap();
        let pump = loaded.pump_indices()[0];
        let p = loaded.links[pump].as_pump().unwrap();
        assert_eq!(p.energy_cost, vec![20.0, 60.0]);
        assert_eq!(p.activation_cost, vec![5.0, 15.0]);
    }

    #[test]
    fn result_document_round_trips_and_renders_dash() {
        let doc = ResultDocument {
            schema_version: SCHEMA_VERSION,
            lower_bound: BoundField::Value(155.6),
            upper_bound: BoundField::Dash(DashMarker::Dash),
            gap: BoundField::Dash(DashMarker::Dash),
            wall_time_s: 1.25,
            termination: "infeasible".into(),
            nodes_explored: 4,
            schedule: None,
            tank_trajectories: BTreeMap::new(),
            baseline_improvement_pct: None,
        };
        let text = write_result(&doc);
        assert!(text.contains("\"gap\": \"-\""));
        assert!(text.contains("\"lower_bound\": 155.6"));
        let parsed = load_result(&text).unwrap();
        assert_eq!(parsed, doc);
    }

    #[test]
    fn improvement_formula_matches_definition() {
        assert!((improvement_pct(100.0, 110.0) - 10.0).abs() < 1e-12);
        let doc = ResultDocument {
            schema_version: SCHEMA_VERSION,
            lower_bound: BoundField::Value(110.0),
            upper_bound: BoundField::Value(120.0),
            gap: BoundField::Value((120.0 - 110.0) / 120.0),
            wall_time_s: 0.0,
            termination: "converged".into(),
            nodes_explored: 0,
            schedule: None,
            tank_trajectories: BTreeMap::new(),
            baseline_improvement_pct: None,
        }
        .with_baseline(100.0);
        assert!((doc.baseline_improvement_pct.unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn schedule_document_round_trips() {
        let inst = fixtures::pump_tank_instance(3);
        let schedule = Schedule::uniform(&inst, true);
        let doc = schedule_to_document(&inst, &schedule);
        let text = serde_json::to_string(&doc).unwrap();
        let again = load_schedule(&inst, &text).unwrap();
        assert_eq!(schedule, again);
    }
}

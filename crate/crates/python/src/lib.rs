//! Python bindings: load/validate/simulate/solve from Python with plain
//! dict-shaped results. The module name is `owfkit`.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use owfkit_core::fixtures;
use owfkit_core::formulation::{RelaxationKind, RelaxationOptions};
use owfkit_core::hydraulics::{self, Schedule};
use owfkit_core::io;
use owfkit_core::preprocess::{obbt as run_obbt, BoundsStore, ObbtConfig, ObbtVariant};
use owfkit_core::solver::{gap as compute_gap, solve_owf, Limits};

/// A loaded, validated scheduling instance.
#[pyclass(name = "Instance")]
struct PyInstance {
    inner: owfkit_core::Instance,
}

#[pymethods]
impl PyInstance {
    #[getter]
    fn node_count(&self) -> usize {
        self.inner.nodes.len()
    }

    #[getter]
    fn link_count(&self) -> usize {
        self.inner.links.len()
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    /// Structural violations as strings; empty means the instance is valid.
    fn validate(&self) -> Vec<String> {
        self.inner.validate().violations.iter().map(|v| v.to_string()).collect()
    }

    /// Renders the instance document back to JSON text.
    fn to_json(&self) -> String {
        io::render_document(&io::document_from_instance(&self.inner))
    }

    fn __repr__(&self) -> String {
        format!(
            "Instance(nodes={}, links={}, horizon={})",
            self.inner.nodes.len(),
            self.inner.links.len(),
            self.inner.horizon()
        )
    }
}

fn schedule_from_dict(instance: &owfkit_core::Instance, statuses: &Bound<'_, PyDict>) -> PyResult<Schedule> {
    let mut map: BTreeMap<String, Vec<bool>> = BTreeMap::new();
    for (key, value) in statuses.iter() {
        let id: String = key.extract()?;
        let bits: Vec<i64> = value.extract()?;
        map.insert(id, bits.into_iter().map(|b| b != 0).collect());
    }
    Schedule::from_status_map(instance, &map).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn schedule_to_dict<'py>(
    py: Python<'py>,
    instance: &owfkit_core::Instance,
    schedule: &Schedule,
) -> PyResult<Bound<'py, PyDict>> {
    let dict = PyDict::new(py);
    for (id, bits) in schedule.to_status_map(instance) {
        let ints: Vec<u8> = bits.into_iter().map(u8::from).collect();
        dict.set_item(id, ints)?;
    }
    Ok(dict)
}

/// Parses an instance document (JSON text with embedded prices).
#[pyfunction]
fn load_instance(text: &str) -> PyResult<PyInstance> {
    io::load_instance(text)
        .map(|inner| PyInstance { inner })
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Built-in example networks: `single_pipe`, `pump_tank`, `parallel_pumps`,
/// `series_pumps`, `valve_junction`, `switching`, `tank_drain`, `infeasible`.
#[pyfunction]
#[pyo3(signature = (name, horizon = 4))]
fn example_instance(name: &str, horizon: usize) -> PyResult<PyInstance> {
    let inner = match name {
        "single_pipe" => fixtures::single_pipe_instance(),
        "pump_tank" => fixtures::pump_tank_instance(horizon),
        "parallel_pumps" => fixtures::parallel_pumps_instance(2, horizon),
        "series_pumps" => fixtures::series_pumps_instance(horizon),
        "valve_junction" => fixtures::valve_junction_instance(horizon),
        "switching" => fixtures::switching_instance(horizon),
        "tank_drain" => fixtures::tank_drain_instance(),
        "infeasible" => fixtures::infeasible_instance(),
        other => return Err(PyValueError::new_err(format!("unknown example `{other}`"))),
    };
    Ok(PyInstance { inner })
}

/// Simulates a fixed schedule; statuses map link ids to 0/1 vectors.
#[pyfunction]
fn simulate<'py>(
    py: Python<'py>,
    instance: &PyInstance,
    statuses: &Bound<'py, PyDict>,
) -> PyResult<Bound<'py, PyDict>> {
    let schedule = schedule_from_dict(&instance.inner, statuses)?;
    let sim = hydraulics::simulate(&instance.inner, &schedule)
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let out = PyDict::new(py);
    out.set_item("feasible", sim.feasible)?;
    out.set_item("first_infeasible_step", sim.first_infeasible_step)?;
    out.set_item("cost", sim.cost(&instance.inner, &schedule))?;
    let violations = PyList::new(
        py,
        sim.violations
            .iter()
            .map(|v| format!("step {}: {} ({})", v.step, v.entity, v.message))
            .collect::<Vec<_>>(),
    )?;
    out.set_item("violations", violations)?;
    let tanks = PyDict::new(py);
    for (ti, &t) in instance.inner.tank_indices().iter().enumerate() {
        tanks.set_item(instance.inner.nodes[t].id.clone(), sim.tank_volumes[ti].clone())?;
    }
    out.set_item("tank_volumes", tanks)?;
    Ok(out)
}

/// Solves the scheduling problem and returns bounds plus the best schedule.
#[pyfunction]
#[pyo3(signature = (instance, relaxation = "oa", xi = 1.0, obbt = None, time_limit = None, node_limit = None))]
fn solve<'py>(
    py: Python<'py>,
    instance: &PyInstance,
    relaxation: &str,
    xi: f64,
    obbt: Option<&str>,
    time_limit: Option<f64>,
    node_limit: Option<u64>,
) -> PyResult<Bound<'py, PyDict>> {
    let kind = match relaxation {
        "oa" => RelaxationKind::OuterApproximation,
        "pw" => RelaxationKind::Piecewise,
        other => return Err(PyValueError::new_err(format!("unknown relaxation `{other}`"))),
    };
    let options = RelaxationOptions { kind, xi, ..Default::default() };

    let mut bounds = BoundsStore::naive(&instance.inner);
    if let Some(chain) = obbt {
        for name in chain.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let variant = ObbtVariant::parse(name)
                .ok_or_else(|| PyValueError::new_err(format!("unknown obbt variant `{name}`")))?;
            let mut cfg = ObbtConfig::new(variant);
            cfg.xi = xi;
            bounds = run_obbt(&instance.inner, &bounds, &cfg)
                .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        }
    }

    let limits = Limits { time_limit_s: time_limit, node_limit, gap_target: 0.0 };
    let result = solve_owf(&instance.inner, &options, &bounds, &[], &limits)
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;

    let out = PyDict::new(py);
    out.set_item("termination", result.termination.as_str())?;
    out.set_item("upper_bound", result.upper_bound())?;
    out.set_item("lower_bound", result.lower_bound)?;
    out.set_item("nodes", result.nodes)?;
    out.set_item("wall_time_s", result.wall_time_s)?;
    match &result.incumbent {
        Some((schedule, cost)) => {
            out.set_item("schedule", schedule_to_dict(py, &instance.inner, schedule)?)?;
            out.set_item("cost", *cost)?;
        }
        None => {
            out.set_item("schedule", py.None())?;
            out.set_item("cost", py.None())?;
        }
    }
    Ok(out)
}

/// Relative optimality gap `(ub − lb)/ub`, clamped at zero.
#[pyfunction]
fn gap(lb: f64, ub: f64) -> f64 {
    compute_gap(lb, ub).value
}

#[pymodule]
fn owfkit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyInstance>()?;
    m.add_function(wrap_pyfunction!(load_instance, m)?)?;
    m.add_function(wrap_pyfunction!(example_instance, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(gap, m)?)?;
    Ok(())
}

//! Pump scheduling (optimal water flow) toolkit.
//!
//! The crate is organized around a pipeline:
//!
//! * [`network`] — the immutable time-expanded water network model,
//! * [`io`] — instance/result documents and price profiles,
//! * [`hydraulics`] — exact nonlinear physics: steady-state network analysis
//!   and extended-period simulation,
//! * [`formulation`] — solver-agnostic MILP relaxations (outer-approximation
//!   and piecewise) of the nonconvex scheduling problem,
//! * [`cuts`] — valid-inequality generators (symmetry, direction,
//!   duality-based, no-good),
//! * [`preprocess`] — optimization-based bound tightening and cut generation,
//! * [`solver`] — a bounded-variable simplex, branch and bound with lazy
//!   hydraulic feasibility checks, and the top-level scheduling solve.

pub mod cuts;
pub mod fixtures;
pub mod formulation;
pub mod hydraulics;
pub mod io;
pub mod model;
pub mod network;
pub mod preprocess;
pub mod solver;

mod dense;

pub use network::{Instance, Link, LinkKind, Node, NodeKind};

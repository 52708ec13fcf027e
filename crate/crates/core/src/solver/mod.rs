//! LP solving behind a small interface, a branch-and-bound driver with lazy
//! cut callbacks, and the top-level scheduling solve that certifies primal
//! feasibility by hydraulic simulation.

mod bb;
mod lp;
mod owf;

pub use bb::{branch_and_bound, solve_mip, CallbackResult, LazyRow, MipResult, MipStatus};
pub use lp::{solve_lp, LpSolution, LpStatus};
pub use owf::{build_relaxation_model, gap, schedule_from_point, solve_owf, Gap, OwfError, OwfResult, Termination};

/// Search limits shared by the MILP and scheduling drivers.
#[derive(Debug, Clone, Default)]
pub struct Limits {
    pub time_limit_s: Option<f64>,
    pub node_limit: Option<u64>,
    /// Stop once `(UB − LB)/|UB|` falls to this value; zero demands proof.
    pub gap_target: f64,
}

//! Command-line front end: validate and inspect instances, run preprocessing
//! with caching, solve, simulate a given schedule, and export models.
//!
//! Exit codes: 0 success, 1 validation violations, 2 malformed input or I/O
//! failure, 3 instance certified infeasible, 4 limits hit without finding a
//! schedule.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use owfkit_core::cuts::Cut;
use owfkit_core::formulation::{Partition, RelaxationKind, RelaxationOptions, TemporalScope};
use owfkit_core::hydraulics::{check_switching, simulate, Schedule};
use owfkit_core::io::{
    self, load_instance_with, schedule_to_document, write_result, BoundField, DashMarker,
    ResultDocument, ScheduleDocument,
};
use owfkit_core::network::Instance;
use owfkit_core::preprocess::{
    obbt, obcg_binary_binary, obcg_binary_continuous, BoundsStore, ObbtConfig, ObbtVariant,
    ObcgConfig, ObcgOutput, PreprocessError,
};
use owfkit_core::solver::{
    build_relaxation_model, gap, solve_lp, solve_owf, Limits, LpStatus, Termination,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_NO_INCUMBENT: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "owfkit", version, about = "Pump scheduling optimization toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RelaxationArg {
    Oa,
    Pw,
}

#[derive(Debug, Clone, Parser)]
pub struct ModelFlags {
    /// Relaxation family.
    #[arg(long, value_enum, default_value = "oa")]
    pub relaxation: RelaxationArg,
    /// Flow partition error tolerance in meters.
    #[arg(long, default_value_t = 1.0)]
    pub xi: f64,
    /// Append the energy-conservation (duality) inequalities.
    #[arg(long)]
    pub duality_cuts: bool,
    /// Append flow-direction valid inequalities.
    #[arg(long)]
    pub direction_vis: bool,
    /// Append symmetry-breaking cuts for identical parallel pumps.
    #[arg(long)]
    pub symmetry_cuts: bool,
    /// Continuously relax flow-direction indicators.
    #[arg(long)]
    pub relax_directions: bool,
}

impl ModelFlags {
    fn options(&self) -> RelaxationOptions {
        RelaxationOptions {
            kind: match self.relaxation {
                RelaxationArg::Oa => RelaxationKind::OuterApproximation,
                RelaxationArg::Pw => RelaxationKind::Piecewise,
            },
            xi: self.xi,
            relax_directions: self.relax_directions,
            duality_cuts: self.duality_cuts,
            direction_vis: self.direction_vis,
            symmetry_cuts: self.symmetry_cuts,
            share_pw_duality: self.relaxation == RelaxationArg::Pw && self.duality_cuts,
        }
    }

    fn cache_tag(&self) -> String {
        format!(
            "{:?}|{}|{}{}{}{}",
            self.relaxation,
            self.xi,
            self.duality_cuts as u8,
            self.direction_vis as u8,
            self.symmetry_cuts as u8,
            self.relax_directions as u8
        )
    }
}

#[derive(Debug, Clone, Parser)]
pub struct PreprocessFlags {
    /// Comma-separated bound tightening chain, e.g. `bt-sr,bt-ss,bt-sq`.
    #[arg(long, default_value = "")]
    pub obbt: String,
    /// Run pairwise optimization-based cut generation after tightening.
    #[arg(long)]
    pub obcg: bool,
    /// Worker threads for preprocessing subproblems.
    #[arg(long, default_value_t = default_jobs())]
    pub jobs: usize,
    /// Wall-clock budget per subproblem, seconds.
    #[arg(long)]
    pub subproblem_time_limit: Option<f64>,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check an instance document against every structural invariant.
    Validate { instance: PathBuf },
    /// Tighten bounds and generate cuts, writing reusable artifacts.
    Preprocess {
        instance: PathBuf,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        preprocess: PreprocessFlags,
        /// Directory for the bounds/cuts artifacts (defaults to the cache).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the scheduling problem and report bounds.
    Solve {
        instance: PathBuf,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        preprocess: PreprocessFlags,
        /// Wall-clock limit in seconds.
        #[arg(long)]
        time_limit: Option<f64>,
        /// Node cap for the search.
        #[arg(long)]
        nodes: Option<u64>,
        /// Result document path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a fixed schedule and report the trajectory verdict.
    Simulate {
        instance: PathBuf,
        schedule: PathBuf,
        /// Result document path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export the configured relaxation in LP format.
    ExportLp {
        instance: PathBuf,
        #[command(flatten)]
        model: ModelFlags,
        /// LP file path (defaults to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn run(cli: Cli) -> i32 {
    match cli.command {
        Command::Validate { instance } => cmd_validate(&instance),
        Command::Preprocess { instance, model, preprocess, out } => {
            cmd_preprocess(&instance, &model, &preprocess, out.as_deref())
        }
        Command::Solve { instance, model, preprocess, time_limit, nodes, out } => {
            cmd_solve(&instance, &model, &preprocess, time_limit, nodes, out.as_deref())
        }
        Command::Simulate { instance, schedule, out } => {
            cmd_simulate(&instance, &schedule, out.as_deref())
        }
        Command::ExportLp { instance, model, out } => cmd_export_lp(&instance, &model, out.as_deref()),
    }
}

fn read_instance(path: &Path) -> Result<(Instance, String), i32> {
    let text = match std::fs::read_to_string(path) {
        Ok(text) => text,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", path.display());
            return Err(EXIT_IO);
        }
    };
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    match load_instance_with(&text, |name| {
        std::fs::read_to_string(base.join(name))
            .map_err(|e| io::IoError::PriceProfile(format!("cannot read {name}: {e}")))
    }) {
        Ok(instance) => Ok((instance, text)),
        Err(io::IoError::Validation(violations)) => {
            for v in violations {
                eprintln!("violation: {v}");
            }
            Err(EXIT_INVALID)
        }
        Err(e) => {
            eprintln!("error: {e}");
            Err(EXIT_IO)
        }
    }
}

pub fn cmd_validate(path: &Path) -> i32 {
    match read_instance(path) {
        Ok((instance, _)) => {
            println!(
                "ok: {} nodes, {} links, {} steps",
                instance.nodes.len(),
                instance.links.len(),
                instance.horizon()
            );
            EXIT_OK
        }
        Err(code) => code,
    }
}

// ---------------------------------------------------------------------------
// preprocessing artifacts and caching

#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub bounds: BoundsStore,
    pub cuts: Vec<Cut>,
}

fn fnv1a(text: &str) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for b in text.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn cache_dir() -> Option<PathBuf> {
    std::env::var_os("OWFKIT_CACHE_DIR").map(PathBuf::from)
}

fn artifact_paths(dir: &Path, key: u64) -> (PathBuf, PathBuf) {
    (dir.join(format!("{key:016x}.bounds.json")), dir.join(format!("{key:016x}.cuts.json")))
}

fn preprocess_cache_key(instance_text: &str, model: &ModelFlags, flags: &PreprocessFlags) -> u64 {
    let config = format!("{}|{}|{}", model.cache_tag(), flags.obbt, flags.obcg as u8);
    fnv1a(instance_text) ^ fnv1a(&config).rotate_left(17)
}

fn load_artifacts(dir: &Path, key: u64) -> Option<Artifacts> {
    let (bounds_path, cuts_path) = artifact_paths(dir, key);
    let bounds = BoundsStore::from_json(&std::fs::read_to_string(bounds_path).ok()?).ok()?;
    let cuts: Vec<Cut> = serde_json::from_str(&std::fs::read_to_string(cuts_path).ok()?).ok()?;
    Some(Artifacts { bounds, cuts })
}

fn store_artifacts(dir: &Path, key: u64, artifacts: &Artifacts) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let (bounds_path, cuts_path) = artifact_paths(dir, key);
    std::fs::write(bounds_path, artifacts.bounds.to_json())?;
    std::fs::write(cuts_path, serde_json::to_string_pretty(&artifacts.cuts).expect("cut serialization"))?;
    Ok(())
}

/// Root relaxation bound under the current bounds, for stage reporting.
fn root_bound(
    instance: &Instance,
    bounds: &BoundsStore,
    model: &ModelFlags,
    base_partition: Option<&Partition>,
) -> Option<(f64, Partition)> {
    let partition =
        Partition::build_refining(instance, bounds, model.xi, TemporalScope::Full, base_partition).ok()?;
    let options = model.options();
    let mut milp = owfkit_core::formulation::build_oa(instance, bounds, &partition, &options).ok()?;
    milp.relax_integrality();
    let sol = solve_lp(&milp);
    if sol.status == LpStatus::Optimal {
        Some((sol.objective, partition))
    } else {
        None
    }
}

fn run_preprocessing(
    instance: &Instance,
    model: &ModelFlags,
    flags: &PreprocessFlags,
) -> Result<Artifacts, i32> {
    let chain: Vec<ObbtVariant> = match flags
        .obbt
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(ObbtVariant::parse)
        .collect::<Option<Vec<_>>>()
    {
        Some(chain) => chain,
        None => {
            eprintln!("error: unknown bound-tightening variant in `{}`", flags.obbt);
            return Err(EXIT_IO);
        }
    };

    let mut bounds = BoundsStore::naive(instance);
    let mut partition: Option<Partition> = None;
    let mut baseline = root_bound(instance, &bounds, model, None).map(|(b, p)| {
        partition = Some(p);
        b
    });

    for variant in &chain {
        let mut cfg = ObbtConfig::new(*variant);
        cfg.xi = model.xi;
        cfg.jobs = flags.jobs.max(1);
        cfg.time_budget_s = flags.subproblem_time_limit;
        let started = Instant::now();
        bounds = match obbt(instance, &bounds, &cfg) {
            Ok(b) => b,
            Err(PreprocessError::InfeasibleInstance) => {
                eprintln!("{}: instance certified infeasible", variant.name());
                return Err(EXIT_INFEASIBLE);
            }
            Err(e) => {
                eprintln!("error: {e}");
                return Err(EXIT_IO);
            }
        };
        let elapsed = started.elapsed().as_secs_f64();
        match (baseline, root_bound(instance, &bounds, model, partition.as_ref())) {
            (Some(before), Some((after, part))) => {
                let pct = io::improvement_pct(before, after);
                println!(
                    "{}: root bound {before:.6} -> {after:.6} ({pct:+.2}%) in {elapsed:.2}s",
                    variant.name()
                );
                baseline = Some(after);
                partition = Some(part);
            }
            _ => println!("{}: done in {elapsed:.2}s", variant.name()),
        }
    }

    let mut cuts = Vec::new();
    if flags.obcg {
        let cfg = ObcgConfig {
            xi: model.xi,
            time_budget_s: flags.subproblem_time_limit,
            jobs: flags.jobs.max(1),
        };
        let started = Instant::now();
        let mut outputs: Vec<ObcgOutput> = Vec::new();
        for fix in [false, true] {
            match obcg_binary_binary(instance, &bounds, fix, &cfg) {
                Ok(out) => outputs.push(out),
                Err(e) => {
                    eprintln!("error: {e}");
                    return Err(EXIT_IO);
                }
            }
        }
        match obcg_binary_continuous(instance, &bounds, &cfg) {
            Ok(out) => outputs.push(out),
            Err(e) => {
                eprintln!("error: {e}");
                return Err(EXIT_IO);
            }
        }
        for out in outputs {
            out.apply_fixings(instance, &mut bounds);
            cuts.extend(out.cuts);
        }
        println!("obcg: {} cuts in {:.2}s", cuts.len(), started.elapsed().as_secs_f64());
    }
    Ok(Artifacts { bounds, cuts })
}

pub fn cmd_preprocess(
    path: &Path,
    model: &ModelFlags,
    flags: &PreprocessFlags,
    out: Option<&Path>,
) -> i32 {
    let (instance, text) = match read_instance(path) {
        Ok(v) => v,
        Err(code) => return code,
    };
    let artifacts = match run_preprocessing(&instance, model, flags) {
        Ok(a) => a,
        Err(code) => return code,
    };
    let key = preprocess_cache_key(&text, model, flags);
    let target = out
        .map(Path::to_path_buf)
        .or_else(cache_dir)
        .unwrap_or_else(|| PathBuf::from("."));
    if let Err(e) = store_artifacts(&target, key, &artifacts) {
        eprintln!("error: cannot write artifacts to {}: {e}", target.display());
        return EXIT_IO;
    }
    if let Some(cache) = cache_dir() {
        if cache != target {
            let _ = store_artifacts(&cache, key, &artifacts);
        }
    }
    println!("artifacts written to {} (key {key:016x})", target.display());
    EXIT_OK
}

pub fn cmd_solve(
    path: &Path,
    model: &ModelFlags,
    preprocess: &PreprocessFlags,
    time_limit: Option<f64>,
    nodes: Option<u64>,
    out: Option<&Path>,
) -> i32 {
    let (instance, text) = match read_instance(path) {
        Ok(v) => v,
        Err(code) => return code,
    };

    let wants_preprocessing = !preprocess.obbt.trim().is_empty() || preprocess.obcg;
    let artifacts = if wants_preprocessing {
        let key = preprocess_cache_key(&text, model, preprocess);
        let cached = cache_dir().and_then(|dir| load_artifacts(&dir, key));
        match cached {
            Some(a) => {
                println!("using cached preprocessing artifacts ({key:016x})");
                a
            }
            None => {
                let a = match run_preprocessing(&instance, model, preprocess) {
                    Ok(a) => a,
                    Err(code) => return code,
                };
                if let Some(dir) = cache_dir() {
                    let _ = store_artifacts(&dir, key, &a);
                }
                a
            }
        }
    } else {
        Artifacts { bounds: BoundsStore::naive(&instance), cuts: Vec::new() }
    };

    let limits = Limits { time_limit_s: time_limit, node_limit: nodes, gap_target: 0.0 };
    let started = Instant::now();
    let result = match solve_owf(&instance, &model.options(), &artifacts.bounds, &artifacts.cuts, &limits) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_IO;
        }
    };
    let wall = started.elapsed().as_secs_f64();

    let (ub, lb) = (result.upper_bound(), result.lower_bound);
    let gap_field = match (lb, ub) {
        (Some(lb), Some(ub)) => BoundField::Value(gap(lb, ub).value),
        _ => BoundField::Dash(DashMarker::Dash),
    };
    println!("{:>12} {:>12} {:>8} {:>10}", "UB", "LB", "Gap", "Time");
    let fmt = |b: Option<f64>| b.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
    let gap_text = match gap_field {
        BoundField::Value(g) => format!("{:.1}%", 100.0 * g),
        BoundField::Dash(_) => "-".into(),
    };
    println!("{:>12} {:>12} {:>8} {:>9.1}s", fmt(ub), fmt(lb), gap_text, wall);

    let mut tank_trajectories = BTreeMap::new();
    let schedule_doc = result.incumbent.as_ref().map(|(schedule, _)| {
        if let Ok(sim) = simulate(&instance, schedule) {
            for (ti, &t) in instance.tank_indices().iter().enumerate() {
                tank_trajectories.insert(instance.nodes[t].id.clone(), sim.tank_volumes[ti].clone());
            }
        }
        schedule_to_document(&instance, schedule)
    });

    let doc = ResultDocument {
        schema_version: io::SCHEMA_VERSION,
        lower_bound: BoundField::from_option(lb),
        upper_bound: BoundField::from_option(ub),
        gap: gap_field,
        wall_time_s: wall,
        termination: result.termination.as_str().to_string(),
        nodes_explored: result.nodes,
        schedule: schedule_doc,
        tank_trajectories,
        baseline_improvement_pct: None,
    };
    if let Some(out) = out {
        if let Err(e) = std::fs::write(out, write_result(&doc)) {
            eprintln!("error: cannot write {}: {e}", out.display());
            return EXIT_IO;
        }
    } else {
        println!("{}", write_result(&doc));
    }

    match result.termination {
        Termination::InfeasibleCertified => EXIT_INFEASIBLE,
        Termination::LimitReached if result.incumbent.is_none() => EXIT_NO_INCUMBENT,
        _ => EXIT_OK,
    }
}

pub fn cmd_simulate(path: &Path, schedule_path: &Path, out: Option<&Path>) -> i32 {
    let (instance, _) = match read_instance(path) {
        Ok(v) => v,
        Err(code) => return code,
    };
    let schedule_text = match std::fs::read_to_string(schedule_path) {
        Ok(text) => text,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", schedule_path.display());
            return EXIT_IO;
        }
    };
    let schedule: Schedule = match io::load_schedule(&instance, &schedule_text) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_IO;
        }
    };

    // switching limits are static data; report them before simulating
    let switching = check_switching(&instance, &schedule);
    for v in &switching {
        println!("switching violation at step {}: {} ({})", v.step, v.entity, v.message);
    }

    let sim = match simulate(&instance, &schedule) {
        Ok(sim) => sim,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_IO;
        }
    };
    let feasible = sim.feasible && switching.is_empty();
    let cost = sim.cost(&instance, &schedule);
    println!(
        "feasible: {feasible}{}",
        sim.first_infeasible_step
            .map(|k| format!(" (first violation at step {k})"))
            .unwrap_or_default()
    );
    for v in &sim.violations {
        println!("violation at step {}: {} ({})", v.step, v.entity, v.message);
    }
    if feasible {
        println!("cost: {cost:.6}");
    }

    let mut tank_trajectories = BTreeMap::new();
    for (ti, &t) in instance.tank_indices().iter().enumerate() {
        tank_trajectories.insert(instance.nodes[t].id.clone(), sim.tank_volumes[ti].clone());
    }
    let doc = ResultDocument {
        schema_version: io::SCHEMA_VERSION,
        lower_bound: BoundField::Dash(DashMarker::Dash),
        upper_bound: BoundField::from_option(feasible.then_some(cost)),
        gap: BoundField::Dash(DashMarker::Dash),
        wall_time_s: 0.0,
        termination: if feasible { "simulated_feasible".into() } else { "simulated_infeasible".into() },
        nodes_explored: 0,
        schedule: Some(ScheduleDocument {
            schema_version: io::SCHEMA_VERSION,
            statuses: schedule
                .to_status_map(&instance)
                .into_iter()
                .map(|(id, bits)| (id, bits.into_iter().map(u8::from).collect()))
                .collect(),
        }),
        tank_trajectories,
        baseline_improvement_pct: None,
    };
    if let Some(out) = out {
        if let Err(e) = std::fs::write(out, write_result(&doc)) {
            eprintln!("error: cannot write {}: {e}", out.display());
            return EXIT_IO;
        }
    }
    if feasible {
        EXIT_OK
    } else {
        EXIT_INFEASIBLE
    }
}

pub fn cmd_export_lp(path: &Path, model: &ModelFlags, out: Option<&Path>) -> i32 {
    let (instance, _) = match read_instance(path) {
        Ok(v) => v,
        Err(code) => return code,
    };
    let bounds = BoundsStore::naive(&instance);
    let (milp, _) = match build_relaxation_model(&instance, &model.options(), &bounds, &[]) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_IO;
        }
    };
    let text = milp.to_lp_format();
    match out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, text) {
                eprintln!("error: cannot write {}: {e}", path.display());
                return EXIT_IO;
            }
        }
        None => print!("{text}"),
    }
    EXIT_OK
}

//! Small ready-made instances used by tests, documentation, and the Python
//! smoke script. The networks are synthetic but hydraulically meaningful:
//! every fixture passes validation and has at least one simulatable schedule
//! unless noted otherwise.

use crate::network::{Demand, Instance, Link, LinkKind, Node, NodeKind, Pipe, Pump, Tank};

/// Builder for assembling instances in tests without repeating bookkeeping.
pub struct InstanceBuilder {
    horizon: usize,
    dt: Vec<f64>,
    nodes: Vec<Node>,
    links: Vec<Link>,
}

impl InstanceBuilder {
    pub fn new(dt: Vec<f64>) -> Self {
        let horizon = dt.len();
        InstanceBuilder { horizon, dt, nodes: Vec::new(), links: Vec::new() }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn reservoir(&mut self, id: &str, head: f64) -> usize {
        self.nodes.push(Node {
            id: id.into(),
            kind: NodeKind::Reservoir,
            head_lb: vec![head; self.horizon],
            head_ub: vec![head; self.horizon],
        });
        self.nodes.len() - 1
    }

    pub fn demand(&mut self, id: &str, rate: Vec<f64>, head_lb: f64, head_ub: f64) -> usize {
        assert_eq!(rate.len(), self.horizon);
        self.nodes.push(Node {
            id: id.into(),
            kind: NodeKind::Demand(Demand { rate }),
            head_lb: vec![head_lb; self.horizon],
            head_ub: vec![head_ub; self.horizon],
        });
        self.nodes.len() - 1
    }

    pub fn junction(&mut self, id: &str, head_lb: f64, head_ub: f64) -> usize {
        self.demand(id, vec![0.0; self.horizon], head_lb, head_ub)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn tank(
        &mut self,
        id: &str,
        diameter: f64,
        bottom: f64,
        initial_head: f64,
        head_lb: f64,
        head_ub: f64,
        flow_bound: f64,
    ) -> usize {
        let area = 0.25 * std::f64::consts::PI * diameter * diameter;
        self.nodes.push(Node {
            id: id.into(),
            kind: NodeKind::Tank(Tank {
                diameter,
                bottom,
                initial_volume: area * (initial_head - bottom),
                flow_lb: vec![-flow_bound; self.horizon],
                flow_ub: vec![flow_bound; self.horizon],
            }),
            head_lb: vec![head_lb; self.horizon + 1],
            head_ub: vec![head_ub; self.horizon + 1],
        });
        self.nodes.len() - 1
    }

    pub fn pipe(&mut self, id: &str, tail: usize, head: usize, length: f64, resistance: f64, qmax: f64) -> usize {
        self.links.push(Link {
            id: id.into(),
            tail,
            head,
            kind: LinkKind::Pipe(Pipe { length, resistance, exponent: crate::network::DEFAULT_LOSS_EXPONENT }),
            flow_lb: vec![-qmax; self.horizon],
            flow_ub: vec![qmax; self.horizon],
            dir_flow_lb_pos: vec![0.0; self.horizon],
            dir_flow_lb_neg: vec![0.0; self.horizon],
        });
        self.links.len() - 1
    }

    #[allow(clippy::too_many_arguments)]
    pub fn pump(
        &mut self,
        id: &str,
        tail: usize,
        head: usize,
        gain: (f64, f64, f64),
        qmax: f64,
        min_active_flow: f64,
        energy_cost: Vec<f64>,
        activation_cost: Vec<f64>,
    ) -> usize {
        assert_eq!(energy_cost.len(), self.horizon);
        self.links.push(Link {
            id: id.into(),
            tail,
            head,
            kind: LinkKind::Pump(Pump {
                gain_a: gain.0,
                gain_b: gain.1,
                gain_c: gain.2,
                energy_cost,
                activation_cost,
                min_on_secs: 0.0,
                min_off_secs: 0.0,
                max_starts: 100,
                symmetry_group: None,
            }),
            flow_lb: vec![0.0; self.horizon],
            flow_ub: vec![qmax; self.horizon],
            dir_flow_lb_pos: vec![min_active_flow; self.horizon],
            dir_flow_lb_neg: vec![0.0; self.horizon],
        });
        self.links.len() - 1
    }

    /// Adjusts a pump's switching limits and symmetry tag after creation.
    pub fn configure_pump(
        &mut self,
        link: usize,
        min_on_secs: f64,
        min_off_secs: f64,
        max_starts: u32,
        group: Option<&str>,
    ) {
        if let LinkKind::Pump(p) = &mut self.links[link].kind {
            p.min_on_secs = min_on_secs;
            p.min_off_secs = min_off_secs;
            p.max_starts = max_starts;
            p.symmetry_group = group.map(str::to_string);
        }
    }

    pub fn valve(&mut self, id: &str, tail: usize, head: usize, qmax: f64) -> usize {
        self.links.push(Link {
            id: id.into(),
            tail,
            head,
            kind: LinkKind::Valve,
            flow_lb: vec![-qmax; self.horizon],
            flow_ub: vec![qmax; self.horizon],
            dir_flow_lb_pos: vec![0.0; self.horizon],
            dir_flow_lb_neg: vec![0.0; self.horizon],
        });
        self.links.len() - 1
    }

    pub fn build(self) -> Instance {
        Instance { nodes: self.nodes, links: self.links, dt: self.dt }
    }
}

/// Three nodes in a path `a -> b -> c`, zero demands, one step.
pub fn path_instance() -> Instance {
    let mut b = InstanceBuilder::new(vec![3600.0]);
    let a = b.reservoir("a", 50.0);
    let m = b.junction("b", 0.0, 60.0);
    let c = b.junction("c", 0.0, 60.0);
    b.pipe("a-b", a, m, 100.0, 0.001, 1.0);
    b.pipe("b-c", m, c, 100.0, 0.001, 1.0);
    b.build()
}

/// Reservoir at 100 m feeding a single consumption node through one pipe.
/// Closed form: flow 0.1 m³/s, demand head `100 − 1.2·0.1^1.852`.
pub fn single_pipe_instance() -> Instance {
    let mut b = InstanceBuilder::new(vec![3600.0]);
    let r = b.reservoir("res", 100.0);
    let d = b.demand("load", vec![-0.1], 50.0, 100.0);
    b.pipe("main", r, d, 1000.0, 0.0012, 1.0);
    b.build()
}

/// One pump lifting from a low reservoir to a junction that a tank also
/// feeds by gravity. The pump refills the tank when running; prices vary by
/// step, so the cheapest feasible schedule idles the pump at the priciest
/// step the tank can bridge.
pub fn pump_tank_instance(horizon: usize) -> Instance {
    let prices = price_profile(horizon);
    let mut b = InstanceBuilder::new(vec![60.0; horizon]);
    let r = b.reservoir("source", 10.0);
    let j = b.demand("town", vec![-0.05; horizon], 15.0, 40.0);
    let t = b.tank("tower", 2.0, 25.0, 27.0, 25.5, 29.0, 0.2);
    b.pump(
        "lift",
        r,
        j,
        (18.0, -200.0, 2.0),
        0.25,
        0.0,
        prices.clone(),
        prices.iter().map(|p| 0.02 * p).collect(),
    );
    b.pipe("tower-main", t, j, 100.0, 0.01, 0.5);
    b.build()
}

/// [`pump_tank_instance`] with a two-step minimum on-time and a single
/// allowed start, thinning the feasible schedule set.
pub fn switching_instance(horizon: usize) -> Instance {
    let mut inst = pump_tank_instance(horizon);
    let pump = inst.pump_indices()[0];
    if let LinkKind::Pump(p) = &mut inst.links[pump].kind {
        p.min_on_secs = 2.0 * 60.0;
        p.min_off_secs = 0.0;
        p.max_starts = 1;
    }
    inst
}

/// `n` identical pumps in parallel between a reservoir and one consumption
/// node. With a positive activation cost, running a single pump is optimal,
/// making the instance a clean symmetry-breaking exercise.
pub fn parallel_pumps_instance(n: usize, horizon: usize) -> Instance {
    let prices = price_profile(horizon);
    let mut b = InstanceBuilder::new(vec![60.0; horizon]);
    let r = b.reservoir("basin", 10.0);
    let d = b.demand("city", vec![-0.08; horizon], 15.0, 28.5);
    for i in 0..n {
        let pump = b.pump(
            &format!("unit{}", i + 1),
            r,
            d,
            (18.0, -200.0, 2.0),
            0.25,
            0.0,
            prices.clone(),
            vec![1.0; horizon],
        );
        if let LinkKind::Pump(p) = &mut b.links[pump].kind {
            p.symmetry_group = Some("station".into());
        }
    }
    b.build()
}

/// Two pumps in series; the second is fed only by the first and both have a
/// positive minimum active flow, so neither can run alone.
pub fn series_pumps_instance(horizon: usize) -> Instance {
    let mut demand = vec![0.0; horizon];
    for (k, d) in demand.iter_mut().enumerate() {
        if k % 2 == 0 {
            *d = -0.05;
        }
    }
    let prices = price_profile(horizon);
    let mut b = InstanceBuilder::new(vec![60.0; horizon]);
    let r = b.reservoir("well", 10.0);
    let m = b.junction("booster", 5.0, 30.0);
    let d = b.demand("hill", demand, 30.0, 45.0);
    b.pump("stage1", r, m, (15.0, -200.0, 2.0), 0.2, 0.02, prices.clone(), vec![0.5; horizon]);
    b.pump("stage2", m, d, (15.0, -200.0, 2.0), 0.2, 0.02, prices, vec![0.5; horizon]);
    b.build()
}

/// Reservoir, pass-through junction, and a valve guarding a consumer whose
/// demand alternates between draw and idle.
pub fn valve_junction_instance(horizon: usize) -> Instance {
    let mut demand = vec![0.0; horizon];
    for (k, d) in demand.iter_mut().enumerate() {
        if k % 2 == 0 {
            *d = -0.04;
        }
    }
    let mut b = InstanceBuilder::new(vec![60.0; horizon]);
    let r = b.reservoir("spring", 30.0);
    let j = b.junction("tee", 10.0, 35.0);
    let d = b.demand("farm", demand, 10.0, 35.0);
    b.pipe("spring-tee", r, j, 200.0, 0.005, 0.5);
    b.valve("gate", j, d, 0.5);
    b.build()
}

/// A demand no pump can cover; the relaxation proves it infeasible at the root.
pub fn infeasible_instance() -> Instance {
    let mut b = InstanceBuilder::new(vec![3600.0; 2]);
    let r = b.reservoir("source", 10.0);
    let d = b.demand("sink", vec![-0.5; 2], 12.0, 40.0);
    b.pump("small", r, d, (25.0, -100.0, 2.0), 0.1, 0.0, vec![1.0; 2], vec![1.0; 2]);
    b.build()
}

/// Uncontrolled tank-fed network whose cumulative drawdown crosses the
/// minimum tank level after the third step.
pub fn tank_drain_instance() -> Instance {
    let mut b = InstanceBuilder::new(vec![100.0; 4]);
    let t = b.tank("store", 2.0, 0.0, 20.0, 11.0, 21.0, 0.5);
    let d = b.demand("draw", vec![-0.1; 4], 0.0, 25.0);
    b.pipe("feed", t, d, 10.0, 0.001, 1.0);
    b.build()
}

/// The synthesized instances used for brute-force oracle comparisons:
/// every one has at most two controls and a horizon of at most four steps.
pub fn oracle_instances() -> Vec<Instance> {
    vec![
        pump_tank_instance(4),
        parallel_pumps_instance(2, 3),
        series_pumps_instance(2),
        valve_junction_instance(2),
        switching_instance(4),
    ]
}

fn price_profile(horizon: usize) -> Vec<f64> {
    // cheap shoulders, expensive middle
    (0..horizon)
        .map(|k| {
            let x = k as f64 / horizon.max(1) as f64;
            20.0 + 80.0 * (-((x - 0.5) * (x - 0.5)) / 0.05).exp()
        })
        .collect()
}

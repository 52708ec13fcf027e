use owfkit_core::fixtures::InstanceBuilder;
use owfkit_core::hydraulics::{simulate, Schedule};
use owfkit_core::io::{document_from_instance, render_document, PricesSection, PumpPowerCoefficients};

fn main() {
    // 24-hour network with the published small-instance dimensions:
    // 6 nodes (2 demands, 3 reservoirs, 1 tank), 5 links (2 pipes, 3 pumps)
    let horizon = 24;
    // diurnal demand (m^3/s, negative = consumption) and a two-peak price
    let demand: Vec<f64> = (0..horizon)
        .map(|k| {
            let h = k as f64;
            -(0.045 + 0.03 * ((h - 13.0) * std::f64::consts::PI / 12.0).cos().max(-0.8))
        })
        .collect();
    let price: Vec<f64> = (0..horizon)
        .map(|k| {
            let h = k as f64;
            let morning = (-((h - 8.0) * (h - 8.0)) / 6.0).exp();
            let evening = (-((h - 19.0) * (h - 19.0)) / 5.0).exp();
            30.0 + 70.0 * morning + 90.0 * evening
        })
        .collect();

    let mut b = InstanceBuilder::new(vec![3600.0; horizon]);
    let r1 = b.reservoir("source1", 10.0);
    let r2 = b.reservoir("source2", 10.0);
    let r3 = b.reservoir("source3", 10.0);
    let j = b.junction("manifold", 12.0, 70.0);
    let d = b.demand("district", demand, 30.0, 70.0);
    let t = b.tank("tower", 8.0, 48.0, 52.0, 49.0, 57.0, 0.5);
    for (i, r) in [r1, r2, r3].into_iter().enumerate() {
        let lambda: Vec<f64> = price.iter().map(|p| 1.2 * p).collect();
        let mu: Vec<f64> = price.iter().map(|p| 0.05 * p).collect();
        let pump = b.pump(&format!("station{}", i + 1), r, j, (55.0, -900.0, 2.0), 0.18, 0.0, lambda, mu);
        b.configure_pump(pump, 3600.0, 1800.0, 18, Some("stations"));
    }
    b.pipe("trunk", j, d, 1500.0, 0.0008, 0.6);
    b.pipe("tower-main", d, t, 400.0, 0.0015, 0.5);
    let inst = b.build();

    let report = inst.validate();
    assert!(report.passed(), "{:?}", report.violations);
    // sanity: running everything all day must be hydraulically feasible
    let sim = simulate(&inst, &Schedule::uniform(&inst, true)).unwrap();
    println!("all-on feasible: {} violations: {:?}", sim.feasible, sim.violations.iter().map(|v| format!("{} {} {}", v.step, v.entity, v.message)).collect::<Vec<_>>());
    if let Some(traj) = sim.tank_volumes.first() {
        println!("tank volume range: {:.1} .. {:.1}", traj.iter().cloned().fold(f64::INFINITY, f64::min), traj.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    }

    let doc = document_from_instance(&inst);
    std::fs::write("instances/small_system_24h.json", render_document(&doc)).unwrap();

    // variant with the prices factored through a shared CSV profile
    let mut doc_profile = doc.clone();
    let mut coefs = std::collections::BTreeMap::new();
    for i in 1..=3 {
        coefs.insert(format!("station{i}"), PumpPowerCoefficients { flow: 1.2, status: 0.05 });
    }
    doc_profile.prices = PricesSection::Profile { profile_csv: "prices_24h.csv".into(), pump_coefficients: coefs };
    std::fs::write("instances/small_system_24h_profile.json", render_document(&doc_profile)).unwrap();
    let mut csv = String::from("time,energy_price\n");
    for (k, p) in price.iter().enumerate() {
        csv.push_str(&format!("{},{}\n", k * 3600, p));
    }
    std::fs::write("instances/prices_24h.csv", csv).unwrap();

    // the four-step teaching example used throughout the documentation
    let toy = owfkit_core::fixtures::pump_tank_instance(4);
    std::fs::write("instances/toy_pump_tank.json", render_document(&document_from_instance(&toy))).unwrap();
    println!("instances written");
}

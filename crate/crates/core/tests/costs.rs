//! Cost evaluation, sweeps and the schedule search.

mod common;

use common::{params, schedule, solved};
use walkin_equilibrium::equilibrium::{solve, SolveConfig};
use walkin_equilibrium::metrics::{evaluate_costs, idle_time_numeric, simulate, ArrivalSampler, SimulationConfig};
use walkin_equilibrium::optimizer::{
    optimize_de, read_sweep_csv, sweep_equal_spacing, DEConfig, Evaluator, Pattern, RowOutcome, SweepSpec,
};
use walkin_equilibrium::params::ModelParams;
use walkin_equilibrium::schedule::Schedule;

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

#[test]
fn simulation_is_deterministic_across_worker_counts() {
    let r = solved("1,3,5", 2.0, false);
    let config = SimulationConfig { replications: 20_000, seed: 7, batch_size: 500 };
    let one = in_pool(1, || simulate(&r, &config).unwrap());
    let four = in_pool(4, || simulate(&r, &config).unwrap());
    assert_eq!(one, four);
    let again = simulate(&r, &config).unwrap();
    assert_eq!(one, again);
    let c1 = in_pool(1, || evaluate_costs(&r, &config).unwrap());
    let c2 = in_pool(3, || evaluate_costs(&r, &config).unwrap());
    assert_eq!(c1, c2);
    let other = simulate(&r, &SimulationConfig { seed: 8, ..config }).unwrap();
    assert_ne!(one.phi_s, other.phi_s);
}

#[test]
fn breakdown_fields_are_consistent() {
    let r = solved("0,2,5", 4.0, false);
    let b = evaluate_costs(&r, &SimulationConfig::new(20_000, 3)).unwrap();
    assert!((b.phi_s - b.per_customer.iter().sum::<f64>()).abs() < 1e-9);
    assert!(b.per_customer.iter().all(|&w| w >= 0.0));
    assert!((0.0..=5.0).contains(&b.e_i));
    assert_eq!(b.e_w, r.expected_wait);
    assert_eq!(b.phi(0.0).unwrap(), b.e_i);
    assert_eq!(b.phi(1.0).unwrap(), b.phi_s + b.lambda * b.e_w);
    let json = walkin_equilibrium::io::to_json_string(&b).unwrap();
    let back: walkin_equilibrium::metrics::CostBreakdown = serde_json::from_str(&json).unwrap();
    assert_eq!(walkin_equilibrium::io::to_json_string(&back).unwrap(), json);
}

#[test]
fn idle_time_agrees_with_simulation() {
    for (text, lambda) in [("1,3,5", 2.0), ("0,0.5,0.8", 4.0)] {
        let r = solved(text, lambda, false);
        let numeric = idle_time_numeric(&r).unwrap();
        let sim = simulate(&r, &SimulationConfig::new(200_000, 11)).unwrap();
        assert!(
            (sim.e_i.mean - numeric).abs() <= 3.0 * sim.e_i.std_error,
            "({text}) numeric {numeric}, simulated {} +- {}",
            sim.e_i.mean,
            sim.e_i.std_error
        );
        assert!(sim.max_conservation_error < 1e-12);
    }
}

#[test]
fn empty_day_is_idle() {
    let p = ModelParams::new(0.01, 1.0, 5.0).unwrap();
    let r = solve(&Schedule::parse("", 5.0).unwrap(), &p, &SolveConfig::default(), false).unwrap();
    let e_i = idle_time_numeric(&r).unwrap();
    assert!((e_i - 5.0).abs() < 0.05, "E_I = {e_i}");
}

#[test]
fn sampler_respects_the_atom_and_the_grid() {
    let r = solved("1,3,5", 2.0, false);
    let s = ArrivalSampler::new(&r).unwrap();
    assert_eq!(s.sample(0.0), 0.0);
    assert_eq!(s.sample(0.5 * r.atom), 0.0);
    let mut prev = 0.0;
    for i in 0..1000 {
        let t = s.sample(i as f64 / 1000.0);
        assert!(t >= prev && t <= 5.0);
        prev = t;
    }
    let e = solved("1,3,5", 2.0, true);
    assert!(ArrivalSampler::new(&e).unwrap().sample(0.0) < 0.0);
}

#[test]
fn table_weighting_example() {
    let eval = Evaluator::new(params(2.0), SimulationConfig::new(200_000, 5));
    let b = eval.costs(&schedule("0,2.5,5")).unwrap();
    let phi = b.phi(0.9).unwrap();
    assert!((phi - 3.4868).abs() <= 0.05 * 3.4868, "phi = {phi}");
}

#[test]
fn sweep_rows_csv_and_coincident_schedules() {
    let spec = SweepSpec { start: 0.5, stop: 3.0, step: 0.5, ..SweepSpec::default() };
    let eval = Evaluator::new(params(2.0), SimulationConfig::new(2_000, 9));
    let table = sweep_equal_spacing(&spec, &eval).unwrap();
    assert_eq!(table.rows.len(), 12);
    assert_eq!(table.failures(), 0);
    let front = table.rows.iter().find(|r| r.pattern == Pattern::Front && r.spacing == 2.5).unwrap();
    let back = table.rows.iter().find(|r| r.pattern == Pattern::Back && r.spacing == 2.5).unwrap();
    assert_eq!(front.schedule, back.schedule);
    assert_eq!(front.outcome, back.outcome);
    assert!(table.rows.iter().filter(|r| r.spacing == 3.0).all(|r| r.outcome == RowOutcome::OutOfRange));

    let mut buf = Vec::new();
    table.write_csv(&mut buf).unwrap();
    let (header, rows) = read_sweep_csv(buf.as_slice()).unwrap();
    assert_eq!(header, ["delta", "schedule", "phi_s", "e_w", "e_i", "phi_g01", "phi_g05", "phi_g09"]);
    assert_eq!(rows.len(), 12);
    for (row, parsed) in table.rows.iter().zip(&rows) {
        assert_eq!(parsed.schedule, row.schedule);
        match row.costs() {
            Some(c) => {
                assert!((parsed.phi_s - c.phi_s).abs() <= 1e-11 * c.phi_s.max(1.0));
                assert!((parsed.phi[2] - c.phi(0.9).unwrap()).abs() <= 1e-11 * parsed.phi[2].max(1.0));
            }
            None => assert!(parsed.phi_s.is_nan()),
        }
    }
}

#[test]
fn de_incumbent_never_regresses() {
    let eval = Evaluator::new(params(2.0), SimulationConfig::new(2_000, 4));
    let config = DEConfig { population: Some(8), max_iterations: 6, final_replications: 2_000, seed: 3, ..DEConfig::default() };
    let seed = [0.0, 0.6, 1.2];
    let seed_phi = eval.costs(&schedule("0,0.6,1.2")).unwrap().phi(0.1).unwrap();
    let r = optimize_de(&eval, 0.1, 3, &config, Some(&seed)).unwrap();
    assert!(r.trace.windows(2).all(|w| w[1].1 <= w[0].1));
    assert!(r.trace[0].1 <= seed_phi);
    assert!(r.phi_search <= seed_phi);
    assert_eq!(r.trace.len(), r.iterations + 1);
    assert!(Schedule::new(r.best_schedule.clone(), 5.0).is_ok());
    // same seeds, same answer
    let again = optimize_de(&eval, 0.1, 3, &config, Some(&seed)).unwrap();
    assert_eq!(r, again);
    let json = r.to_json().unwrap();
    let back = walkin_equilibrium::optimizer::OptimizationResult::from_json(&json).unwrap();
    assert_eq!(back.to_json().unwrap(), json);
}

#[test]
fn de_rejects_bad_weights() {
    let eval = Evaluator::new(params(2.0), SimulationConfig::new(100, 1));
    assert!(optimize_de(&eval, 1.5, 3, &DEConfig::default(), None).is_err());
    assert!(optimize_de(&eval, 0.5, 0, &DEConfig::default(), None).is_err());
}

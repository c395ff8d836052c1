//! Solves the reference instances and prints atom, support start and wait.

use std::time::Instant;

use walkin_equilibrium::equilibrium::{solve, verify_equilibrium, SolveConfig};
use walkin_equilibrium::params::ModelParams;
use walkin_equilibrium::schedule::Schedule;

fn main() {
    let delta: f64 = std::env::args().nth(1).map_or(0.01, |s| s.parse().unwrap());
    let early = std::env::args().nth(2).is_some_and(|s| s == "early");
    let cases = [
        ("1,3,5", 2.0),
        ("1,3,5", 4.0),
        ("4,4.5,5", 2.0),
        ("4,4.5,5", 4.0),
        ("0,2,5", 2.0),
        ("0,2,5", 4.0),
        ("0,0.5,0.8", 2.0),
        ("0,0.5,0.8", 4.0),
        ("0,4.5,5", 2.0),
        ("0,4.5,5", 4.0),
    ];
    for (sched, lambda) in cases {
        let params = ModelParams::new(lambda, 1.0, 5.0).unwrap().with_delta(delta);
        let schedule = Schedule::parse(sched, 5.0).unwrap();
        let clock = Instant::now();
        match solve(&schedule, &params, &SolveConfig::default(), early) {
            Ok(r) => {
                let v = verify_equilibrium(&r).unwrap();
                println!(
                    "({sched}) lambda={lambda}: p_e={:.4} t0={:.4} E_w={:.4} F(T)={:.4} iters={} shed={:.1e} dev={:.4} margin={:.2e} gaps={:?} [{:?}]",
                    r.atom,
                    r.support_start,
                    r.expected_wait,
                    r.diagnostics.cdf_terminal,
                    r.diagnostics.iterations,
                    r.diagnostics.shed_mass,
                    v.on_support_max_rel_dev,
                    v.off_support_min_margin,
                    v.gap_violations,
                    clock.elapsed()
                );
            }
            Err(e) => println!("({sched}) lambda={lambda}: error {e}"),
        }
    }
}

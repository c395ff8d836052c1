#![allow(dead_code)]

use rand::Rng;
use rand_distr::{Distribution, Exp};
use walkin_equilibrium::equilibrium::{solve, EquilibriumResult, SolveConfig};
use walkin_equilibrium::params::ModelParams;
use walkin_equilibrium::schedule::Schedule;

pub const HORIZON: f64 = 5.0;

/// Reference instances with their expected atom sizes.
pub const REFERENCE: [(&str, f64, f64); 10] = [
    ("1,3,5", 2.0, 0.790),
    ("1,3,5", 4.0, 0.815),
    ("4,4.5,5", 2.0, 0.827),
    ("4,4.5,5", 4.0, 0.983),
    ("0,2,5", 2.0, 0.128),
    ("0,2,5", 4.0, 0.550),
    ("0,0.5,0.8", 2.0, 0.0),
    ("0,0.5,0.8", 4.0, 0.151),
    ("0,4.5,5", 2.0, 0.163),
    ("0,4.5,5", 4.0, 0.714),
];

pub fn params(lambda: f64) -> ModelParams {
    ModelParams::new(lambda, 1.0, HORIZON).unwrap()
}

pub fn schedule(text: &str) -> Schedule {
    Schedule::parse(text, HORIZON).unwrap()
}

pub fn solved(text: &str, lambda: f64, early: bool) -> EquilibriumResult {
    solve(&schedule(text), &params(lambda), &SolveConfig::default(), early).unwrap()
}

pub fn solved_with_delta(text: &str, lambda: f64, delta: f64) -> EquilibriumResult {
    solve(&schedule(text), &params(lambda).with_delta(delta), &SolveConfig::default(), false).unwrap()
}

/// Wait of a customer present at `start` with `ahead` customers in front, when
/// scheduled customers arriving at `appointments` (none before `start`) overtake it.
pub fn tagged_wait<R: Rng>(rng: &mut R, start: f64, ahead: usize, appointments: &[f64], service: &Exp<f64>) -> f64 {
    let mut clock = start;
    let mut m = ahead;
    let mut next = appointments.iter().copied().peekable();
    while m > 0 {
        let done = clock + service.sample(rng);
        match next.peek() {
            Some(&a) if a < done => {
                clock = a;
                m += 1;
                next.next();
            }
            _ => {
                clock = done;
                m -= 1;
            }
        }
    }
    clock - start
}

pub fn density_right_after(r: &EquilibriumResult, a: f64, width: f64) -> f64 {
    r.grid.iter().filter(|g| g.t >= a - 1e-9 && g.t <= a + width + 1e-9).map(|g| g.density).fold(0.0, f64::max)
}

/// Largest jump of F between consecutive grid rows beyond what the density explains.
pub fn max_unexplained_jump(r: &EquilibriumResult) -> f64 {
    r.grid
        .windows(2)
        .filter(|w| w[0].t > 1e-9 || r.early)
        .map(|w| {
            let h = w[1].t - w[0].t;
            let allowed = w[0].density.max(w[1].density) * h;
            (w[1].cdf - w[0].cdf - allowed).max(0.0)
        })
        .fold(0.0, f64::max)
}

//! Nash-equilibrium arrival distribution of the walk-in customers.
//!
//! A strategy is an equilibrium when every instant in its support yields the same
//! expected wait `E_w` and no instant outside it yields less. Three searches cover
//! the cases:
//!
//! * [`solve_atom_case`]: an atom `p` at opening, bisected until `F(T) = 1`;
//! * [`solve_schedule_at_zero`]: a customer is booked at 0; either the support
//!   starts at some `t0 >= 0` without an atom, or the atom search takes over;
//! * [`solve_early`]: arrivals before opening are allowed; the support start
//!   `t0 < 0` is bisected instead and no atom survives.

pub(crate) mod grid;
mod solver;
mod verify;

use serde::{Deserialize, Serialize};

use crate::params::ModelParams;

pub use grid::{Sample, Start, Trajectory};
pub use solver::{evaluate_strategy, replay, solve, solve_atom_case, solve_early, solve_schedule_at_zero, Instance};
pub use verify::{verify_equilibrium, VerificationReport, VerifyTolerances};

/// Solver controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    /// Bisection width on the atom size below which the search may stop.
    pub atom_bisect_tol: f64,
    /// Accepted `|F(T) - 1|`.
    pub cdf_tol: f64,
    /// Upper bound on forward passes per bisection.
    pub max_outer_iters: usize,
    /// Relative slack of the `E_w(t) <= E_w` support test.
    pub support_slack: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            atom_bisect_tol: 0.01,
            cdf_tol: 0.005,
            max_outer_iters: 100,
            support_slack: 1e-6,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let ok = self.atom_bisect_tol > 0.0
            && self.cdf_tol > 0.0
            && self.cdf_tol < 0.05
            && self.max_outer_iters > 0
            && self.support_slack >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(crate::Error::InvalidParameter(format!("invalid solver configuration {self:?}")))
        }
    }
}

/// Which search produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Atom,
    Delayed,
    Early,
}

/// One grid row: `[t, f(t), F(t), E_w(t)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct GridPoint {
    pub t: f64,
    pub density: f64,
    pub cdf: f64,
    pub expected_wait: f64,
}

impl From<[f64; 4]> for GridPoint {
    fn from(a: [f64; 4]) -> Self {
        Self { t: a[0], density: a[1], cdf: a[2], expected_wait: a[3] }
    }
}

impl From<GridPoint> for [f64; 4] {
    fn from(g: GridPoint) -> Self {
        [g.t, g.density, g.cdf, g.expected_wait]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub cdf_terminal: f64,
    pub shed_mass: f64,
    /// Forward passes spent by the search.
    pub iterations: usize,
    pub method: Method,
    pub truncation: usize,
    pub n_max: usize,
    /// `(search variable, F(T))` per forward pass, in order.
    pub trace: Vec<(f64, f64)>,
}

/// A solved equilibrium.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub params: ModelParams,
    pub schedule: Vec<f64>,
    pub early: bool,
    #[serde(rename = "p_e")]
    pub atom: f64,
    #[serde(rename = "t0")]
    pub support_start: f64,
    #[serde(rename = "E_w")]
    pub expected_wait: f64,
    pub grid: Vec<GridPoint>,
    pub diagnostics: Diagnostics,
}

impl EquilibriumResult {
    /// `F(t)` by linear interpolation of the grid; 0 before the first row.
    pub fn cdf_at(&self, t: f64) -> f64 {
        let g = &self.grid;
        if g.is_empty() || t < g[0].t {
            return 0.0;
        }
        let i = g.partition_point(|p| p.t <= t);
        if i >= g.len() {
            return g[g.len() - 1].cdf;
        }
        let (a, b) = (&g[i - 1], &g[i]);
        a.cdf + (b.cdf - a.cdf) * (t - a.t) / (b.t - a.t)
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        crate::io::to_json_string(self)
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

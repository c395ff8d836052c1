use super::grid::{Integrator, Policy, Start, Trajectory, TIME_EPS};
use super::{Diagnostics, EquilibriumResult, GridPoint, Method, SolveConfig};
use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::schedule::{AugmentedSchedule, Schedule};
use crate::waiting::WaitTable;

/// Everything a forward pass needs for one (schedule, parameters) pair.
pub struct Instance {
    pub params: ModelParams,
    pub schedule: Schedule,
    pub aug: AugmentedSchedule,
    pub table: WaitTable,
    /// Walk-in truncation level `K`.
    pub k_max: usize,
}

impl Instance {
    pub fn new(schedule: &Schedule, params: &ModelParams) -> Result<Self> {
        params.validate()?;
        if (schedule.horizon() - params.horizon).abs() > TIME_EPS {
            return Err(Error::InvalidSchedule(format!(
                "schedule horizon {} differs from model horizon {}",
                schedule.horizon(),
                params.horizon
            )));
        }
        let aug = schedule.augmented();
        let k_max = params.truncation();
        let n_max = k_max + schedule.len() + 1;
        let table = WaitTable::build(&aug, params.mu, n_max)?;
        Ok(Self {
            params: *params,
            schedule: schedule.clone(),
            aug,
            table,
            k_max,
        })
    }

    fn integrator(&self) -> Result<Integrator<'_>> {
        Integrator::new(&self.params, &self.aug, &self.table, self.k_max)
    }

    /// One forward pass of the equilibrium rule from `start`.
    pub fn trial(&self, start: Start, config: &SolveConfig) -> Result<Trajectory> {
        self.integrator()?.run(start, Policy::Equilibrium { slack: config.support_slack })
    }

    /// One forward pass with prescribed node densities.
    pub fn run_given(&self, start: Start, densities: &[f64]) -> Result<Trajectory> {
        self.integrator()?.run(start, Policy::Given(densities))
    }

    /// Node times of a pass from `start`.
    pub fn node_times(&self, start: Start) -> Result<Vec<f64>> {
        Ok(self.integrator()?.nodes(start).iter().map(|n| n.t).collect())
    }

    fn finish(&self, tr: Trajectory, method: Method, early: bool, search: Search) -> EquilibriumResult {
        let support_start = match tr.start {
            Start::Atom(_) => 0.0,
            Start::Delayed(t0) | Start::Early(t0) => t0,
        };
        EquilibriumResult {
            params: self.params,
            schedule: self.schedule.times().to_vec(),
            early,
            atom: tr.start.atom(),
            support_start,
            expected_wait: tr.reference,
            grid: tr
                .samples
                .iter()
                .map(|s| GridPoint { t: s.t, density: s.density, cdf: s.cdf, expected_wait: s.expected_wait })
                .collect(),
            diagnostics: Diagnostics {
                cdf_terminal: tr.cdf_terminal,
                shed_mass: tr.shed_mass,
                iterations: search.trace.len(),
                method,
                truncation: self.k_max,
                n_max: self.table.n_max(),
                trace: search.trace,
            },
        }
    }
}

#[derive(Default)]
struct Search {
    trace: Vec<(f64, f64)>,
}

impl Search {
    fn run(&mut self, inst: &Instance, start: Start, config: &SolveConfig, x: f64) -> Result<Trajectory> {
        let tr = inst.trial(start, config)?;
        self.trace.push((x, tr.cdf_terminal));
        Ok(tr)
    }

    /// Bisection on a scalar whose pass yields `F(T)`; `increasing` gives the
    /// direction of `F(T)` in the scalar. Stops once both the bracket width and
    /// `|F(T) - 1|` are within tolerance.
    #[allow(clippy::too_many_arguments)]
    fn bisect(
        &mut self,
        inst: &Instance,
        config: &SolveConfig,
        mut lo: f64,
        mut hi: f64,
        increasing: bool,
        width_tol: f64,
        make: impl Fn(f64) -> Start,
    ) -> Result<Trajectory> {
        let mut best: Option<Trajectory> = None;
        for _ in 0..config.max_outer_iters {
            let x = 0.5 * (lo + hi);
            let tr = self.run(inst, make(x), config, x)?;
            let excess = tr.cdf_terminal > 1.0;
            if excess == increasing {
                hi = x;
            } else {
                lo = x;
            }
            let err = (tr.cdf_terminal - 1.0).abs();
            if err <= config.cdf_tol && hi - lo <= width_tol {
                return Ok(tr);
            }
            if best.as_ref().is_none_or(|b| err < (b.cdf_terminal - 1.0).abs()) {
                best = Some(tr);
            }
            if hi - lo <= 1e-13 * hi.abs().max(1.0) {
                break;
            }
        }
        Err(Error::NonConvergence {
            iterations: self.trace.len(),
            cdf_terminal: best.map_or(f64::NAN, |b| b.cdf_terminal),
        })
    }
}

fn within(tr: &Trajectory, config: &SolveConfig) -> bool {
    (tr.cdf_terminal - 1.0).abs() <= config.cdf_tol
}

/// Equilibrium for `schedule`, dispatching on the booking at 0 and on whether
/// arrivals before opening are allowed.
pub fn solve(schedule: &Schedule, params: &ModelParams, config: &SolveConfig, early: bool) -> Result<EquilibriumResult> {
    if early {
        solve_early(schedule, params, config)
    } else if schedule.starts_at_zero() {
        solve_schedule_at_zero(schedule, params, config)
    } else {
        solve_atom_case(schedule, params, config)
    }
}

/// Bisection on the atom at opening.
pub fn solve_atom_case(schedule: &Schedule, params: &ModelParams, config: &SolveConfig) -> Result<EquilibriumResult> {
    config.validate()?;
    let inst = Instance::new(schedule, params)?;
    let mut search = Search::default();
    let tr = atom_search(&inst, config, &mut search)?;
    Ok(inst.finish(tr, Method::Atom, false, search))
}

fn atom_search(inst: &Instance, config: &SolveConfig, search: &mut Search) -> Result<Trajectory> {
    let full = search.run(inst, Start::Atom(1.0), config, 1.0)?;
    if full.cdf_terminal < 1.0 - config.cdf_tol {
        return Err(Error::Infeasible(format!(
            "F(T) = {} < 1 even with every walk-in at opening",
            full.cdf_terminal
        )));
    }
    search.bisect(inst, config, 0.0, 1.0, true, config.atom_bisect_tol, Start::Atom)
}

/// Booking at opening: support start `t0 >= 0` without atom, else the atom search.
pub fn solve_schedule_at_zero(
    schedule: &Schedule,
    params: &ModelParams,
    config: &SolveConfig,
) -> Result<EquilibriumResult> {
    config.validate()?;
    if !schedule.starts_at_zero() {
        return Err(Error::InvalidSchedule("first appointment is not at time 0".into()));
    }
    let inst = Instance::new(schedule, params)?;
    let mut search = Search::default();
    let (tr, method) = delayed_search(&inst, config, &mut search)?;
    Ok(inst.finish(tr, method, false, search))
}

fn delayed_search(inst: &Instance, config: &SolveConfig, search: &mut Search) -> Result<(Trajectory, Method)> {
    let at_open = search.run(inst, Start::Delayed(0.0), config, 0.0)?;
    if within(&at_open, config) {
        return Ok((at_open, Method::Delayed));
    }
    if at_open.cdf_terminal < 1.0 {
        return Ok((atom_search(inst, config, search)?, Method::Atom));
    }
    let pts = inst.aug.points().to_vec();
    let m = inst.aug.customers();
    let delta = inst.params.delta;
    // advance interval by interval while even the latest start overshoots
    for l in 1..=m {
        let (a, b) = (pts[l], pts[l + 1]);
        if b - a <= 0.0 {
            continue;
        }
        let right = b - 1e3 * TIME_EPS;
        let tr = search.run(inst, Start::Delayed(right), config, right)?;
        if within(&tr, config) {
            return Ok((tr, Method::Delayed));
        }
        if tr.cdf_terminal > 1.0 {
            continue;
        }
        let tr = search.bisect(inst, config, a, right, false, delta, Start::Delayed)?;
        return Ok((tr, Method::Delayed));
    }
    Err(Error::Infeasible(
        "no support start in [0, T] brings F(T) down to 1".into(),
    ))
}

/// Arrivals before opening allowed. Returns the no-early equilibrium unchanged
/// when that one has no atom; otherwise bisects a negative support start.
pub fn solve_early(schedule: &Schedule, params: &ModelParams, config: &SolveConfig) -> Result<EquilibriumResult> {
    config.validate()?;
    let inst = Instance::new(schedule, params)?;
    let mut search = Search::default();
    if schedule.starts_at_zero() {
        let probe = inst.trial(Start::Delayed(0.0), config)?;
        if probe.cdf_terminal >= 1.0 - config.cdf_tol {
            let (tr, method) = delayed_search(&inst, config, &mut search)?;
            return Ok(inst.finish(tr, method, true, search));
        }
    }
    let at_open = search.run(&inst, Start::Early(0.0), config, 0.0)?;
    if within(&at_open, config) {
        return Ok(inst.finish(at_open, Method::Early, true, search));
    }
    let mut hi = 0.0;
    let mut lo = -1.0;
    loop {
        let tr = search.run(&inst, Start::Early(lo), config, lo)?;
        if within(&tr, config) {
            return Ok(inst.finish(tr, Method::Early, true, search));
        }
        if tr.cdf_terminal > 1.0 {
            break;
        }
        hi = lo;
        lo -= 1.0;
        if search.trace.len() > config.max_outer_iters {
            return Err(Error::NonConvergence {
                iterations: search.trace.len(),
                cdf_terminal: tr.cdf_terminal,
            });
        }
    }
    let tr = search.bisect(&inst, config, lo, hi, false, params.delta, Start::Early)?;
    Ok(inst.finish(tr, Method::Early, true, search))
}

fn start_of(result: &EquilibriumResult) -> Start {
    if result.atom > 0.0 {
        Start::Atom(result.atom)
    } else if result.support_start < 0.0 {
        Start::Early(result.support_start)
    } else {
        Start::Delayed(result.support_start)
    }
}

/// Re-integrates the dynamics under the result's own densities.
pub fn replay(result: &EquilibriumResult) -> Result<Trajectory> {
    let schedule = Schedule::new(result.schedule.clone(), result.params.horizon)?;
    let inst = Instance::new(&schedule, &result.params)?;
    let start = start_of(result);
    let times = inst.node_times(start)?;
    if times.len() != result.grid.len()
        || times.iter().zip(&result.grid).any(|(t, g)| (t - g.t).abs() > 1e-8)
    {
        return Err(Error::InvalidEquilibrium(
            "grid does not match the schedule and step of the stored parameters".into(),
        ));
    }
    let f: Vec<f64> = result.grid.iter().map(|g| g.density).collect();
    if f.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidEquilibrium("negative or missing density".into()));
    }
    inst.run_given(start, &f)
}

/// Builds a result for an arbitrary strategy `density(t)` (not necessarily an
/// equilibrium), e.g. to exercise the verification on a negative control. The
/// reported `E_w` is the strategy's mean wait.
pub fn evaluate_strategy(
    schedule: &Schedule,
    params: &ModelParams,
    start: Start,
    density: impl Fn(f64) -> f64,
) -> Result<EquilibriumResult> {
    let inst = Instance::new(schedule, params)?;
    let times = inst.node_times(start)?;
    let f: Vec<f64> = times.iter().map(|&t| density(t)).collect();
    let mut tr = inst.run_given(start, &f)?;
    let mut mass = start.atom();
    let mut total = start.atom() * tr.samples.first().map_or(0.0, |s| s.expected_wait);
    for w in tr.samples.windows(2) {
        let m = w[0].density * (w[1].t - w[0].t);
        mass += m;
        total += m * w[0].expected_wait;
    }
    tr.reference = if mass > 0.0 { total / mass } else { 0.0 };
    let method = match start {
        Start::Atom(_) => Method::Atom,
        Start::Delayed(_) => Method::Delayed,
        Start::Early(_) => Method::Early,
    };
    let early = matches!(start, Start::Early(_));
    Ok(inst.finish(tr, method, early, Search::default()))
}

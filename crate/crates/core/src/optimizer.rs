//! Equal-spacing sweeps and Differential Evolution over appointment schedules.
//!
//! Every candidate schedule is scored by solving its equilibrium and evaluating
//! the social cost. All candidates share one simulation seed (common random
//! numbers), so two schedules are compared on the same sampled days and a
//! re-evaluation of a candidate reproduces its score exactly.

use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{solve, SolveConfig};
use crate::error::{Error, Result};
use crate::io::fmt12;
use crate::metrics::{evaluate_costs, CostBreakdown, SimulationConfig};
use crate::params::ModelParams;
use crate::schedule::Schedule;

/// Weights reported by default in sweep tables.
pub const DEFAULT_GAMMAS: [f64; 3] = [0.1, 0.5, 0.9];

/// How a schedule is turned into a cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluator {
    pub params: ModelParams,
    pub solve: SolveConfig,
    pub simulation: SimulationConfig,
    pub early: bool,
}

impl Evaluator {
    pub fn new(params: ModelParams, simulation: SimulationConfig) -> Self {
        Self { params, solve: SolveConfig::default(), simulation, early: false }
    }

    pub fn costs(&self, schedule: &Schedule) -> Result<CostBreakdown> {
        let result = solve(schedule, &self.params, &self.solve, self.early)?;
        evaluate_costs(&result, &self.simulation)
    }

    pub fn with_replications(mut self, replications: usize) -> Self {
        self.simulation.replications = replications;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    /// `(0, d, 2d, ...)`
    Front,
    /// `(..., T - 2d, T - d, T)`
    Back,
}

impl Pattern {
    /// Equally spaced times with gap `spacing`; `None` if they leave `[0, horizon]`.
    pub fn times(self, spacing: f64, customers: usize, horizon: f64) -> Option<Vec<f64>> {
        if customers == 0 || spacing <= 0.0 || (customers - 1) as f64 * spacing > horizon + 1e-9 {
            return None;
        }
        let times = (0..customers)
            .map(|i| match self {
                Pattern::Front => round_grid(i as f64 * spacing),
                Pattern::Back => round_grid(horizon - (customers - 1 - i) as f64 * spacing),
            })
            .map(|t| t.clamp(0.0, horizon))
            .collect();
        Some(times)
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pattern::Front => "front",
            Pattern::Back => "back",
        })
    }
}

impl std::str::FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "front" => Ok(Pattern::Front),
            "back" => Ok(Pattern::Back),
            _ => Err(Error::InvalidParameter(format!("unknown pattern `{s}`"))),
        }
    }
}

/// Removes accumulated binary noise from grid arithmetic such as `3 * 0.1`.
fn round_grid(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub patterns: Vec<Pattern>,
    pub start: f64,
    pub stop: f64,
    pub step: f64,
    pub customers: usize,
    pub gammas: Vec<f64>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            patterns: vec![Pattern::Front, Pattern::Back],
            start: 0.1,
            stop: 5.0,
            step: 0.1,
            customers: 3,
            gammas: DEFAULT_GAMMAS.to_vec(),
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.start > 0.0 && self.stop >= self.start) {
            return Err(Error::InvalidParameter("spacing grid needs 0 < start <= stop and step > 0".into()));
        }
        if self.customers == 0 || self.patterns.is_empty() {
            return Err(Error::InvalidParameter("sweep needs at least one customer and one pattern".into()));
        }
        if let Some(g) = self.gammas.iter().find(|g| !(0.0..=1.0).contains(*g)) {
            return Err(Error::Domain(format!("weight must lie in [0, 1], got {g}")));
        }
        Ok(())
    }

    /// Parses `start:stop:step`.
    pub fn parse_grid(text: &str) -> Result<(f64, f64, f64)> {
        let parts: Vec<&str> = text.split(':').collect();
        let bad = || Error::InvalidParameter(format!("expected start:stop:step, got `{text}`"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let v: Vec<f64> = parts.iter().map(|p| p.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad())?;
        Ok((v[0], v[1], v[2]))
    }

    pub fn spacings(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| round_grid(self.start + i as f64 * self.step)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum RowOutcome {
    Ok { costs: CostBreakdown },
    /// The spacing puts appointments outside `[0, T]`; nothing was evaluated.
    OutOfRange,
    Failed { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub pattern: Pattern,
    pub spacing: f64,
    pub schedule: Vec<f64>,
    pub outcome: RowOutcome,
}

impl SweepRow {
    pub fn costs(&self) -> Option<&CostBreakdown> {
        match &self.outcome {
            RowOutcome::Ok { costs } => Some(costs),
            _ => None,
        }
    }

    pub fn phi(&self, gamma: f64) -> Option<f64> {
        self.costs().and_then(|c| c.phi(gamma).ok())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub gammas: Vec<f64>,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| matches!(r.outcome, RowOutcome::Failed { .. })).count()
    }

    /// Row with the lowest `phi(gamma)`; ties go to the earlier row.
    pub fn best(&self, gamma: f64) -> Option<&SweepRow> {
        self.rows
            .iter()
            .filter_map(|r| r.phi(gamma).map(|p| (r, p)))
            .fold(None, |acc: Option<(&SweepRow, f64)>, (r, p)| match acc {
                Some((_, bp)) if bp <= p => acc,
                _ => Some((r, p)),
            })
            .map(|(r, _)| r)
    }

    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["delta", "schedule", "phi_s", "e_w", "e_i"].iter().map(|s| s.to_string()).collect();
        h.extend(self.gammas.iter().map(|g| gamma_column(*g)));
        h
    }

    /// Writes the table as CSV. Rows without costs carry `NaN` in the numeric columns.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header()).map_err(csv_error)?;
        for row in &self.rows {
            let sched = format_schedule(&row.schedule);
            let mut rec = vec![fmt12(row.spacing), sched];
            match row.costs() {
                Some(c) => {
                    rec.extend([fmt12(c.phi_s), fmt12(c.e_w), fmt12(c.e_i)]);
                    rec.extend(self.gammas.iter().map(|g| fmt12(c.phi(*g).unwrap_or(f64::NAN))));
                }
                None => rec.extend(std::iter::repeat_n("NaN".to_string(), 3 + self.gammas.len())),
            }
            w.write_record(&rec).map_err(csv_error)?;
        }
        w.flush().map_err(|e| Error::Io(e.to_string()))?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Column name of a weight: `0.1 -> phi_g01`, `0.25 -> phi_g025`.
pub fn gamma_column(gamma: f64) -> String {
    format!("phi_g{}", fmt12(gamma).replace('.', ""))
}

/// Schedule column text: times joined by `;`.
pub fn format_schedule(times: &[f64]) -> String {
    times.iter().map(|t| fmt12(*t)).collect::<Vec<_>>().join(";")
}

fn parse_schedule_field(text: &str) -> Result<Vec<f64>> {
    text.split(';')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| Error::Io(format!("bad schedule `{text}`"))))
        .collect()
}

/// Parsed CSV row, for reading sweep tables back.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub delta: f64,
    pub schedule: Vec<f64>,
    pub phi_s: f64,
    pub e_w: f64,
    pub e_i: f64,
    pub phi: Vec<f64>,
}

pub fn read_sweep_csv<R: std::io::Read>(input: R) -> Result<(Vec<String>, Vec<CsvRow>)> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
    let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Io(format!("bad number `{s}`")));
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_error)?;
        let schedule = parse_schedule_field(&rec[1])?;
        rows.push(CsvRow {
            delta: num(&rec[0])?,
            schedule,
            phi_s: num(&rec[2])?,
            e_w: num(&rec[3])?,
            e_i: num(&rec[4])?,
            phi: rec.iter().skip(5).map(num).collect::<Result<_>>()?,
        });
    }
    Ok((header, rows))
}

/// Solves and costs every `(pattern, spacing)` point. Point failures are recorded in
/// their row and the sweep continues.
pub fn sweep_equal_spacing(spec: &SweepSpec, eval: &Evaluator) -> Result<SweepTable> {
    spec.validate()?;
    eval.params.validate()?;
    let horizon = eval.params.horizon;
    let points: Vec<(Pattern, f64)> = spec
        .patterns
        .iter()
        .flat_map(|p| spec.spacings().into_iter().map(move |d| (*p, d)))
        .collect();
    let rows = points
        .par_iter()
        .map(|&(pattern, spacing)| match pattern.times(spacing, spec.customers, horizon) {
            None => SweepRow {
                pattern,
                spacing,
                schedule: pattern_nominal(pattern, spacing, spec.customers, horizon),
                outcome: RowOutcome::OutOfRange,
            },
            Some(times) => {
                let outcome = match Schedule::new(times.clone(), horizon).and_then(|s| eval.costs(&s)) {
                    Ok(costs) => RowOutcome::Ok { costs },
                    Err(e) => RowOutcome::Failed { message: e.to_string() },
                };
                SweepRow { pattern, spacing, schedule: times, outcome }
            }
        })
        .collect();
    Ok(SweepTable { gammas: spec.gammas.clone(), rows })
}

fn pattern_nominal(pattern: Pattern, spacing: f64, customers: usize, horizon: f64) -> Vec<f64> {
    (0..customers)
        .map(|i| match pattern {
            Pattern::Front => round_grid(i as f64 * spacing),
            Pattern::Back => round_grid(horizon - (customers - 1 - i) as f64 * spacing),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DEConfig {
    /// Population size; `None` means 15 per appointment.
    pub population: Option<usize>,
    pub differential_weight: f64,
    pub crossover: f64,
    pub max_iterations: usize,
    /// Iterations the incumbent must stay unchanged before stopping.
    pub window: usize,
    /// Absolute change below which the incumbent counts as unchanged.
    pub tolerance: f64,
    pub seed: u64,
    /// Replications used to re-score the final incumbent.
    pub final_replications: usize,
}

impl Default for DEConfig {
    fn default() -> Self {
        Self {
            population: None,
            differential_weight: 0.8,
            crossover: 0.9,
            max_iterations: 200,
            window: 10,
            tolerance: 1e-4,
            seed: 1,
            final_replications: 1_000_000,
        }
    }
}

impl DEConfig {
    pub fn population_for(&self, customers: usize) -> usize {
        self.population.unwrap_or(15 * customers)
    }

    pub fn validate(&self, customers: usize) -> Result<()> {
        if self.population_for(customers) < 4 {
            return Err(Error::InvalidParameter("population must be at least 4".into()));
        }
        if !(self.differential_weight > 0.0 && self.differential_weight < 2.0) {
            return Err(Error::InvalidParameter("differential weight must lie in (0, 2)".into()));
        }
        if !(0.0..=1.0).contains(&self.crossover) {
            return Err(Error::InvalidParameter("crossover rate must lie in [0, 1]".into()));
        }
        if self.max_iterations == 0 || self.window == 0 || self.final_replications == 0 || !(self.tolerance >= 0.0) {
            return Err(Error::InvalidParameter("iterations, window and final replications must be positive".into()));
        }
        Ok(())
    }
}

/// Sorts `x`, clips it to `[0, horizon]` and pushes neighbours apart to at least `gap`.
pub fn repair(x: &mut [f64], horizon: f64, gap: f64) {
    let slack = 1e-12 * horizon.max(1.0);
    x.sort_by(f64::total_cmp);
    for v in x.iter_mut() {
        *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, horizon) };
    }
    for i in 1..x.len() {
        if x[i] < x[i - 1] + gap - slack {
            x[i] = x[i - 1] + gap;
        }
    }
    if let Some(last) = x.last_mut() {
        if *last > horizon {
            *last = horizon;
        }
    }
    for i in (0..x.len().saturating_sub(1)).rev() {
        if x[i] > x[i + 1] - gap + slack {
            x[i] = x[i + 1] - gap;
        }
    }
    if let Some(first) = x.first_mut() {
        if *first < 0.0 {
            *first = 0.0;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub lambda: f64,
    pub gamma: f64,
    pub config: DEConfig,
    pub best_schedule: Vec<f64>,
    /// Objective of `best_schedule` re-scored at `config.final_replications`.
    pub phi_star: f64,
    /// Objective of `best_schedule` inside the search.
    pub phi_search: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `(iteration, best objective)`; iteration 0 is the initial population.
    pub trace: Vec<(usize, f64)>,
    pub costs: CostBreakdown,
}

impl OptimizationResult {
    pub fn to_json(&self) -> Result<String> {
        crate::io::to_json_string(self).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Io(e.to_string()))
    }
}

fn objective(eval: &Evaluator, x: &[f64], gamma: f64) -> f64 {
    Schedule::new(x.to_vec(), eval.params.horizon)
        .and_then(|s| eval.costs(&s))
        .and_then(|c| c.phi(gamma))
        .unwrap_or(f64::INFINITY)
}

/// DE/rand/1/bin over schedules of `customers` appointments in `[0, T]`.
///
/// `seed_schedule`, if given, replaces the first member of the initial population.
/// Stops when the incumbent objective changes by at most `tolerance` for `window`
/// consecutive iterations or after `max_iterations`.
pub fn optimize_de(
    eval: &Evaluator,
    gamma: f64,
    customers: usize,
    config: &DEConfig,
    seed_schedule: Option<&[f64]>,
) -> Result<OptimizationResult> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Domain(format!("weight must lie in [0, 1], got {gamma}")));
    }
    if customers == 0 {
        return Err(Error::InvalidParameter("need at least one appointment".into()));
    }
    config.validate(customers)?;
    eval.params.validate()?;
    let horizon = eval.params.horizon;
    let gap = eval.params.delta;
    if (customers - 1) as f64 * gap > horizon {
        return Err(Error::InvalidParameter("appointments do not fit with the minimum gap".into()));
    }
    let np = config.population_for(customers);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut pop: Vec<Vec<f64>> = (0..np)
        .map(|_| {
            let mut x: Vec<f64> = (0..customers).map(|_| rng.random_range(0.0..=horizon)).collect();
            repair(&mut x, horizon, gap);
            x
        })
        .collect();
    if let Some(s) = seed_schedule {
        if s.len() != customers {
            return Err(Error::InvalidParameter("seed schedule has the wrong length".into()));
        }
        let mut x = s.to_vec();
        repair(&mut x, horizon, gap);
        pop[0] = x;
    }
    let mut cost: Vec<f64> = pop.par_iter().map(|x| objective(eval, x, gamma)).collect();

    let best_of = |cost: &[f64]| {
        cost.iter().enumerate().fold(0, |b, (i, c)| if *c < cost[b] { i } else { b })
    };
    let mut best = best_of(&cost);
    let mut trace = vec![(0, cost[best])];
    let mut unchanged = 0;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < config.max_iterations {
        iterations += 1;
        let trials: Vec<Vec<f64>> = (0..np)
            .map(|i| {
                let mut pick = || loop {
                    let j = rng.random_range(0..np);
                    if j != i {
                        break j;
                    }
                };
                let a = pick();
                let b = loop {
                    let j = pick();
                    if j != a {
                        break j;
                    }
                };
                let c = loop {
                    let j = pick();
                    if j != a && j != b {
                        break j;
                    }
                };
                let forced = rng.random_range(0..customers);
                let mut y = pop[i].clone();
                for d in 0..customers {
                    if d == forced || rng.random::<f64>() < config.crossover {
                        y[d] = pop[a][d] + config.differential_weight * (pop[b][d] - pop[c][d]);
                    }
                }
                repair(&mut y, horizon, gap);
                y
            })
            .collect();
        let trial_cost: Vec<f64> = trials.par_iter().map(|x| objective(eval, x, gamma)).collect();
        for (i, (y, c)) in trials.into_iter().zip(trial_cost).enumerate() {
            if c <= cost[i] {
                pop[i] = y;
                cost[i] = c;
            }
        }
        let previous = cost[best];
        best = best_of(&cost);
        trace.push((iterations, cost[best]));
        if (previous - cost[best]).abs() <= config.tolerance {
            unchanged += 1;
            if unchanged >= config.window {
                converged = true;
                break;
            }
        } else {
            unchanged = 0;
        }
    }

    let best_schedule = pop[best].clone();
    let final_eval = eval.with_replications(config.final_replications);
    let schedule = Schedule::new(best_schedule.clone(), horizon)?;
    let costs = final_eval.costs(&schedule)?;
    Ok(OptimizationResult {
        lambda: eval.params.lambda,
        gamma,
        config: *config,
        best_schedule,
        phi_star: costs.phi(gamma)?,
        phi_search: cost[best],
        iterations,
        converged,
        trace,
        costs,
    })
}

//! Social-cost components of a schedule under its equilibrium.
//!
//! The walk-in wait `E_w` is the solver's equilibrium value and the idle time is
//! integrated from the empty-system probability. The scheduled customers' waits
//! depend on which customers are ahead of them, information the scalar queue
//! length does not carry, so they come from a discrete-event simulation of the
//! day with walk-ins drawn from the solved distribution.
//!
//! Replication `r` draws from its own ChaCha stream `(seed, r)`, and batches are
//! reduced in index order, so results do not depend on the worker count.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::truncation_level;
use crate::dynamics::StateVector;
use crate::equilibrium::grid::TIME_EPS;
use crate::equilibrium::EquilibriumResult;
use crate::error::{Error, Result};

/// Two-sided normal quantile of the reported confidence intervals.
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub replications: usize,
    pub seed: u64,
    /// Replications per batch; batches are the unit of parallel work and of the
    /// batch-means interval.
    pub batch_size: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { replications: 10_000, seed: 1, batch_size: 1_000 }
    }
}

impl SimulationConfig {
    pub fn new(replications: usize, seed: u64) -> Self {
        Self { replications, seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter(
                "replications and batch size must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Outcome of one simulated day.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DayOutcome {
    /// Waits of the walk-ins, in the order they were given.
    pub walkin_waits: Vec<f64>,
    /// Waits of the scheduled customers, in appointment order.
    pub scheduled_waits: Vec<f64>,
    /// Idle time of the server on `[0, T]`.
    pub idle: f64,
    /// Busy time of the server on `[0, T]`.
    pub busy: f64,
    /// Work past closing.
    pub overtime: f64,
}

fn overlap(a: f64, b: f64, horizon: f64) -> f64 {
    (b.min(horizon) - a.max(0.0)).max(0.0)
}

/// Simulates one day: FCFS single server opening at 0, customers booked at
/// `scheduled` have non-preemptive priority over waiting walk-ins, walk-ins are
/// served in the order of `walkins` (which must be sorted by time; equal times
/// keep their given order). `service` yields service times in service order.
pub fn simulate_day(
    walkins: &[f64],
    scheduled: &[f64],
    horizon: f64,
    mut service: impl FnMut() -> f64,
) -> DayOutcome {
    debug_assert!(walkins.windows(2).all(|w| w[0] <= w[1]));
    let mut out = DayOutcome {
        walkin_waits: vec![0.0; walkins.len()],
        scheduled_waits: vec![0.0; scheduled.len()],
        ..DayOutcome::default()
    };
    let (mut iw, mut is) = (0usize, 0usize);
    let mut queue_w: VecDeque<usize> = VecDeque::new();
    let mut queue_s: VecDeque<usize> = VecDeque::new();
    let mut free = 0.0f64;
    loop {
        while is < scheduled.len() && scheduled[is] <= free {
            queue_s.push_back(is);
            is += 1;
        }
        while iw < walkins.len() && walkins[iw] <= free {
            queue_w.push_back(iw);
            iw += 1;
        }
        if queue_s.is_empty() && queue_w.is_empty() {
            let next_s = scheduled.get(is).copied().unwrap_or(f64::INFINITY);
            let next_w = walkins.get(iw).copied().unwrap_or(f64::INFINITY);
            let next = next_s.min(next_w);
            if next == f64::INFINITY {
                break;
            }
            out.idle += overlap(free, next, horizon);
            free = next;
            continue;
        }
        let start = free;
        let wait = if let Some(i) = queue_s.pop_front() {
            &mut out.scheduled_waits[i]
        } else {
            let i = queue_w.pop_front().unwrap();
            &mut out.walkin_waits[i]
        };
        *wait = start;
        let s = service();
        out.busy += overlap(start, start + s, horizon);
        free = start + s;
    }
    out.idle += overlap(free, horizon, horizon);
    out.overtime = (free - horizon).max(0.0);
    for (w, a) in out.walkin_waits.iter_mut().zip(walkins) {
        *w -= a;
    }
    for (w, a) in out.scheduled_waits.iter_mut().zip(scheduled) {
        *w -= a;
    }
    out
}

/// Inverse-cdf sampler of a solved arrival distribution (atom at 0, linear
/// interpolation of `F` between grid rows).
#[derive(Debug, Clone)]
pub struct ArrivalSampler {
    times: Vec<f64>,
    cdf: Vec<f64>,
    atom: f64,
    total: f64,
}

impl ArrivalSampler {
    pub fn new(result: &EquilibriumResult) -> Result<Self> {
        let times: Vec<f64> = result.grid.iter().map(|g| g.t).collect();
        let cdf: Vec<f64> = result.grid.iter().map(|g| g.cdf).collect();
        let total = cdf.last().copied().unwrap_or(0.0);
        if times.len() < 2 || !(total > 0.0) {
            return Err(Error::InvalidEquilibrium("empty arrival distribution".into()));
        }
        if cdf.windows(2).any(|w| w[1] < w[0] - 1e-12) {
            return Err(Error::InvalidEquilibrium("cdf is not monotone".into()));
        }
        Ok(Self { times, cdf, atom: result.atom, total })
    }

    /// Arrival time for a uniform draw `u` in `[0, 1)`.
    pub fn sample(&self, u: f64) -> f64 {
        let target = u * self.total;
        if target < self.atom {
            return 0.0;
        }
        let i = self.cdf.partition_point(|&c| c < target).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        if c1 > c0 {
            t0 + (t1 - t0) * ((target - c0) / (c1 - c0)).clamp(0.0, 1.0)
        } else {
            t1
        }
    }
}

/// Running sums of one estimated quantity.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn merge(&mut self, o: &Moments) {
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
    }
}

/// Monte-Carlo point estimate with its uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    /// Standard error from the per-replication variance.
    pub std_error: f64,
    /// 95% half-width from batch means (falls back to the i.i.d. one for a single batch).
    pub ci_halfwidth: f64,
}

impl Estimate {
    fn from(total: &Moments, batches: &[f64], n: usize) -> Self {
        let nf = n as f64;
        let mean = total.sum / nf;
        let var = if n > 1 { ((total.sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0) } else { 0.0 };
        let std_error = (var / nf).sqrt();
        let b = batches.len();
        let ci_halfwidth = if b > 1 {
            let bm = batches.iter().sum::<f64>() / b as f64;
            let bv = batches.iter().map(|x| (x - bm) * (x - bm)).sum::<f64>() / (b as f64 - 1.0);
            Z95 * (bv / b as f64).sqrt()
        } else {
            Z95 * std_error
        };
        Self { mean, std_error, ci_halfwidth }
    }
}

/// Aggregated simulation output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub replications: usize,
    pub seed: u64,
    /// Total scheduled wait per day.
    pub phi_s: Estimate,
    /// Wait of each scheduled customer.
    pub per_customer: Vec<Estimate>,
    /// Total walk-in wait per day over the expected walk-in count: the wait of a tagged walk-in.
    pub e_w: Estimate,
    /// Mean wait per simulated walk-in (ratio estimator).
    pub mean_walkin_wait: f64,
    pub e_i: Estimate,
    pub overtime: Estimate,
    /// Largest `|idle + busy - T|` seen in any replication.
    pub max_conservation_error: f64,
}

#[derive(Clone)]
struct Batch {
    phi_s: Moments,
    per: Vec<Moments>,
    e_w: Moments,
    e_i: Moments,
    overtime: Moments,
    walkins: usize,
    walkin_wait: f64,
    conservation: f64,
    reps: usize,
}

impl Batch {
    fn new(m: usize) -> Self {
        Self {
            phi_s: Moments::default(),
            per: vec![Moments::default(); m],
            e_w: Moments::default(),
            e_i: Moments::default(),
            overtime: Moments::default(),
            walkins: 0,
            walkin_wait: 0.0,
            conservation: 0.0,
            reps: 0,
        }
    }
}

/// Simulates `config.replications` days under the solved walk-in distribution.
pub fn simulate(result: &EquilibriumResult, config: &SimulationConfig) -> Result<SimulationSummary> {
    config.validate()?;
    let params = result.params;
    if (result.diagnostics.cdf_terminal - 1.0).abs() > 0.05 {
        return Err(Error::InvalidEquilibrium(format!(
            "F(T) = {} is not a solved distribution",
            result.diagnostics.cdf_terminal
        )));
    }
    let sampler = ArrivalSampler::new(result)?;
    let arrival_mean = params.lambda * sampler.total;
    let arrivals = Poisson::new(arrival_mean).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let service = Exp::new(params.mu).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let scheduled = result.schedule.clone();
    let m = scheduled.len();
    let horizon = params.horizon;

    let n_batches = config.replications.div_ceil(config.batch_size);
    let batches: Vec<Batch> = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let mut acc = Batch::new(m);
            let lo = b * config.batch_size;
            let hi = (lo + config.batch_size).min(config.replications);
            let mut keyed: Vec<(f64, f64)> = Vec::new();
            let mut times: Vec<f64> = Vec::new();
            for rep in lo..hi {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(rep as u64);
                let n = arrivals.sample(&mut rng) as usize;
                keyed.clear();
                for _ in 0..n {
                    let t = sampler.sample(rng.random::<f64>());
                    keyed.push((t, 0.0));
                }
                // simultaneous arrivals (the atom) get uniformly random positions
                keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut i = 0;
                while i < keyed.len() {
                    let j = keyed[i..].iter().position(|x| x.0 != keyed[i].0).map_or(keyed.len(), |d| i + d);
                    keyed[i..j].shuffle(&mut rng);
                    i = j;
                }
                times.clear();
                times.extend(keyed.iter().map(|x| x.0));
                let day = simulate_day(&times, &scheduled, horizon, || service.sample(&mut rng));
                let total_s: f64 = day.scheduled_waits.iter().sum();
                acc.phi_s.push(total_s);
                for (mm, w) in acc.per.iter_mut().zip(&day.scheduled_waits) {
                    mm.push(*w);
                }
                let total_w: f64 = day.walkin_waits.iter().sum();
                acc.e_w.push(total_w / arrival_mean);
                acc.walkins += n;
                acc.walkin_wait += total_w;
                acc.e_i.push(day.idle);
                acc.overtime.push(day.overtime);
                acc.conservation = acc.conservation.max((day.idle + day.busy - horizon).abs());
                acc.reps += 1;
            }
            acc
        })
        .collect();

    let mut total = Batch::new(m);
    for b in &batches {
        total.phi_s.merge(&b.phi_s);
        for (t, x) in total.per.iter_mut().zip(&b.per) {
            t.merge(x);
        }
        total.e_w.merge(&b.e_w);
        total.e_i.merge(&b.e_i);
        total.overtime.merge(&b.overtime);
        total.walkins += b.walkins;
        total.walkin_wait += b.walkin_wait;
        total.conservation = total.conservation.max(b.conservation);
        total.reps += b.reps;
    }
    let n = total.reps;
    let means = |f: &dyn Fn(&Batch) -> &Moments| -> Vec<f64> {
        batches.iter().map(|b| f(b).sum / b.reps as f64).collect()
    };
    let per_customer = (0..m)
        .map(|i| Estimate::from(&total.per[i], &means(&|b| &b.per[i]), n))
        .collect();
    Ok(SimulationSummary {
        replications: n,
        seed: config.seed,
        phi_s: Estimate::from(&total.phi_s, &means(&|b| &b.phi_s), n),
        per_customer,
        e_w: Estimate::from(&total.e_w, &means(&|b| &b.e_w), n),
        mean_walkin_wait: if total.walkins > 0 { total.walkin_wait / total.walkins as f64 } else { 0.0 },
        e_i: Estimate::from(&total.e_i, &means(&|b| &b.e_i), n),
        overtime: Estimate::from(&total.overtime, &means(&|b| &b.overtime), n),
        max_conservation_error: total.conservation,
    })
}

/// Sub-steps per grid cell in [`idle_time_numeric`].
const IDLE_SUBSTEPS: usize = 16;

/// Expected idle time on `[0, T]`: integral of the empty-system probability
/// under the solved arrival distribution.
///
/// The arrival rate is taken constant on each grid cell (the same reading of the
/// grid as [`ArrivalSampler`]) and the forward equations are re-integrated with
/// [`IDLE_SUBSTEPS`] Euler sub-steps per cell on a state space wide enough that
/// truncation is negligible.
pub fn idle_time_numeric(result: &EquilibriumResult) -> Result<f64> {
    let params = result.params;
    let grid = &result.grid;
    if grid.len() < 2 {
        return Err(Error::InvalidEquilibrium("empty grid".into()));
    }
    let schedule = &result.schedule;
    let k_cap = truncation_level(params.lambda, 1.0 - 1e-12);
    let n_cap = k_cap + schedule.len() + 1;
    let opening = grid.partition_point(|g| g.t <= TIME_EPS).max(1) - 1;
    let mut state = StateVector::poisson(n_cap, n_cap, params.lambda * grid[opening].cdf, 0.0);
    let mut next = 0;
    while next < schedule.len() && schedule[next] <= TIME_EPS {
        state.apply_scheduled_arrival();
        next += 1;
    }
    let mut idle = 0.0;
    for w in grid[opening..].windows(2) {
        let h = w[1].t - w[0].t;
        if h > TIME_EPS {
            let f = ((w[1].cdf - w[0].cdf) / h).max(0.0);
            let sub = h / IDLE_SUBSTEPS as f64;
            for _ in 0..IDLE_SUBSTEPS {
                let before = state.probs[0];
                state.step_forward(f, sub, params.lambda, params.mu);
                idle += 0.5 * sub * (before + state.probs[0]);
            }
        }
        while next < schedule.len() && schedule[next] <= w[1].t + TIME_EPS {
            state.apply_scheduled_arrival();
            next += 1;
        }
    }
    Ok(idle)
}

/// 95% half-widths of the simulated components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostHalfWidths {
    pub phi_s: f64,
    pub per_customer: Vec<f64>,
    pub e_w_sim: f64,
    pub e_i_sim: f64,
}

/// Cost components of one schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub lambda: f64,
    /// Total expected wait of the scheduled customers (simulated).
    pub phi_s: f64,
    pub per_customer: Vec<f64>,
    /// Equilibrium wait of a walk-in (solver).
    pub e_w: f64,
    /// Expected idle time on `[0, T]` (numeric integral).
    pub e_i: f64,
    pub ci_halfwidths: CostHalfWidths,
    /// Simulated counterparts of `e_w` and `e_i`.
    pub e_w_sim: f64,
    pub e_i_sim: f64,
    /// Expected work past `T`; reported, not costed.
    pub overtime: f64,
    pub replications: usize,
    pub seed: u64,
}

impl CostBreakdown {
    /// `gamma (phi_s + lambda e_w) + (1 - gamma) e_i`.
    pub fn phi(&self, gamma: f64) -> Result<f64> {
        social_cost(self, gamma)
    }
}

pub fn social_cost(breakdown: &CostBreakdown, gamma: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Domain(format!("weight must lie in [0, 1], got {gamma}")));
    }
    Ok(gamma * (breakdown.phi_s + breakdown.lambda * breakdown.e_w) + (1.0 - gamma) * breakdown.e_i)
}

/// Numeric `E_w` and `E_I` combined with simulated scheduled waits.
pub fn evaluate_costs(result: &EquilibriumResult, config: &SimulationConfig) -> Result<CostBreakdown> {
    let e_i = idle_time_numeric(result)?;
    let sim = simulate(result, config)?;
    Ok(CostBreakdown {
        lambda: result.params.lambda,
        phi_s: sim.phi_s.mean,
        per_customer: sim.per_customer.iter().map(|e| e.mean).collect(),
        e_w: result.expected_wait,
        e_i,
        ci_halfwidths: CostHalfWidths {
            phi_s: sim.phi_s.ci_halfwidth,
            per_customer: sim.per_customer.iter().map(|e| e.ci_halfwidth).collect(),
            e_w_sim: sim.e_w.ci_halfwidth,
            e_i_sim: sim.e_i.ci_halfwidth,
        },
        e_w_sim: sim.e_w.mean,
        e_i_sim: sim.e_i.mean,
        overtime: sim.overtime.mean,
        replications: sim.replications,
        seed: sim.seed,
    })
}

//! Time grid and the forward integrator shared by the solvers, the replay used
//! for verification, and the idle-time integral.

use crate::dynamics::{
    atom_expected_wait, density_terms, early_density, early_expected_wait, opening_gaps, StateVector,
};
use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::schedule::AugmentedSchedule;
use crate::waiting::WaitTable;

/// Appointment instants closer than this to a grid time are treated as equal.
pub const TIME_EPS: f64 = 1e-9;

/// One integration node. `segment` is `None` before opening.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Node {
    pub t: f64,
    pub segment: Option<usize>,
    /// A scheduled customer joins exactly at this node.
    pub arrival: bool,
}

/// Nodes from `start` (0 or negative) to `T` inclusive, every appointment a node,
/// steps of `delta` with a shorter residual step at the end of each segment.
/// `extra` adds one node, used for a support start that is off the regular grid.
pub(crate) fn build_nodes(aug: &AugmentedSchedule, delta: f64, start: f64, extra: Option<f64>) -> Vec<Node> {
    let mut nodes = Vec::new();
    if start < 0.0 {
        nodes.push(Node { t: start, segment: None, arrival: false });
        // regular points -j*delta strictly inside (start, 0)
        let steps = (-start / delta - TIME_EPS).ceil() as i64;
        for j in (1..steps).rev() {
            let t = -(j as f64) * delta;
            if t > start + TIME_EPS {
                nodes.push(Node { t, segment: None, arrival: false });
            }
        }
    }
    let pts = aug.points();
    let m = aug.customers();
    for k in 0..=m {
        let (a, b) = (pts[k], pts[k + 1]);
        if b - a <= 0.0 {
            continue;
        }
        let arrival = k >= 1 && a > 0.0;
        let mut j = 0usize;
        loop {
            let t = a + j as f64 * delta;
            if t >= b - TIME_EPS {
                break;
            }
            nodes.push(Node { t, segment: Some(k), arrival: arrival && j == 0 });
            j += 1;
        }
    }
    let horizon = aug.horizon();
    let last_arrival = m >= 1 && pts[m] == horizon && horizon > 0.0;
    nodes.push(Node { t: horizon, segment: Some(m), arrival: last_arrival });
    if nodes.first().map(|n| n.t) != Some(0.0) && start >= 0.0 {
        // only possible when every segment is empty, i.e. never for T > 0
        nodes.insert(0, Node { t: 0.0, segment: Some(aug.segment_of(0.0)), arrival: false });
    }
    if let Some(x) = extra {
        if x > 0.0 && x < horizon && !nodes.iter().any(|n| (n.t - x).abs() <= TIME_EPS) {
            let pos = nodes.partition_point(|n| n.t < x);
            let segment = Some(aug.segment_of(x));
            nodes.insert(pos, Node { t: x, segment, arrival: false });
        }
    }
    nodes
}

/// How the walk-in population enters the day.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Start {
    /// Atom of mass `p` at opening, continuous arrivals afterwards.
    Atom(f64),
    /// No atom; arrivals are impossible before `t0 >= 0`.
    Delayed(f64),
    /// Arrivals begin at `t0 < 0`, before opening.
    Early(f64),
}

impl Start {
    pub fn origin(&self) -> f64 {
        match *self {
            Start::Early(t0) => t0.min(0.0),
            _ => 0.0,
        }
    }

    pub fn atom(&self) -> f64 {
        match *self {
            Start::Atom(p) => p,
            _ => 0.0,
        }
    }

    fn extra_node(&self) -> Option<f64> {
        match *self {
            Start::Delayed(t0) if t0 > 0.0 => Some(t0),
            _ => None,
        }
    }
}

/// Recorded values at one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub density: f64,
    pub cdf: f64,
    pub expected_wait: f64,
    /// Probability of an empty system; 0 before opening.
    pub empty: f64,
}

/// Output of one forward pass.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub start: Start,
    pub samples: Vec<Sample>,
    pub cdf_terminal: f64,
    /// Reference equilibrium wait of the pass.
    pub reference: f64,
    /// `1 - sum P_n(T)`: truncation losses of the pass.
    pub shed_mass: f64,
    /// Trapezoid integral of `P_0` over `[0, T]`, jumps excluded.
    pub idle_time: f64,
}

/// Rule producing the density at each node.
pub(crate) enum Policy<'a> {
    /// Zero-derivative density where `E_w(t)` does not exceed the reference.
    Equilibrium { slack: f64 },
    /// Densities supplied per node.
    Given(&'a [f64]),
}

/// Precomputed per-instance data for repeated forward passes.
pub(crate) struct Integrator<'a> {
    pub params: &'a ModelParams,
    pub aug: &'a AugmentedSchedule,
    pub table: &'a WaitTable,
    pub k_max: usize,
    pub offset: usize,
    gaps: Vec<f64>,
}

impl<'a> Integrator<'a> {
    pub fn new(params: &'a ModelParams, aug: &'a AugmentedSchedule, table: &'a WaitTable, k_max: usize) -> Result<Self> {
        let gaps = opening_gaps(table, k_max)?;
        Ok(Self {
            params,
            aug,
            table,
            k_max,
            offset: aug.opening_offset(),
            gaps,
        })
    }

    pub fn nodes(&self, start: Start) -> Vec<Node> {
        build_nodes(self.aug, self.params.delta, start.origin(), start.extra_node())
    }

    fn opening_state(&self, mean: f64) -> StateVector {
        let mut s = StateVector::poisson(self.table.n_max(), self.k_max, mean, 0.0);
        if self.offset == 1 {
            s.apply_scheduled_arrival();
        }
        s
    }

    pub fn run(&self, start: Start, policy: Policy<'_>) -> Result<Trajectory> {
        let nodes = self.nodes(start);
        if let Policy::Given(f) = policy {
            if f.len() != nodes.len() {
                return Err(Error::InvalidEquilibrium(format!(
                    "density grid has {} points, the schedule needs {}",
                    f.len(),
                    nodes.len()
                )));
            }
        }
        let lambda = self.params.lambda;
        let mu = self.params.mu;
        let mut cdf = start.atom();
        let mut reference = match start {
            Start::Atom(p) => Some(atom_expected_wait(p, lambda, self.table, self.k_max)?),
            Start::Early(t0) => Some(-t0.min(0.0) + self.table.boundary(self.offset, self.offset)?),
            Start::Delayed(_) => None,
        };
        let delayed_t0 = match start {
            Start::Delayed(t0) => t0,
            _ => f64::NEG_INFINITY,
        };
        let mut state: Option<StateVector> = match start {
            Start::Early(t0) if t0 < 0.0 => None,
            _ => Some(self.opening_state(lambda * cdf)),
        };
        let mut samples = Vec::with_capacity(nodes.len());
        let mut idle_time = 0.0;
        let last = nodes.len() - 1;

        for (j, node) in nodes.iter().enumerate() {
            let t = node.t;
            let h = if j < last { nodes[j + 1].t - t } else { 0.0 };
            let Some(k) = node.segment else {
                let ew = early_expected_wait(t, cdf, lambda, self.table, self.k_max)?;
                let f = match policy {
                    Policy::Equilibrium { .. } => early_density(cdf, lambda, &self.gaps),
                    Policy::Given(fs) => fs[j],
                };
                samples.push(Sample { t, density: f, cdf, expected_wait: ew, empty: 0.0 });
                cdf += f * h;
                continue;
            };
            let s = state.get_or_insert_with(|| self.opening_state(lambda * cdf));
            let terms = density_terms(s, self.table, k, lambda)?;
            let mut ew = terms.expected_wait;
            let atom_node = j == 0 && start.atom() > 0.0;
            if atom_node {
                ew = reference.unwrap();
            }
            if reference.is_none() && t >= delayed_t0 - TIME_EPS {
                reference = Some(ew);
            }
            let f = match policy {
                Policy::Given(fs) => fs[j],
                Policy::Equilibrium { slack } => {
                    if j == last || atom_node {
                        0.0
                    } else {
                        match reference {
                            Some(r) if ew <= r + slack * r.abs() => terms.density(t)?.max(0.0),
                            _ => 0.0,
                        }
                    }
                }
            };
            samples.push(Sample { t, density: f, cdf, expected_wait: ew, empty: s.probs[0] });
            if j == last {
                break;
            }
            cdf += f * h;
            let empty_before = s.probs[0];
            s.step_forward(f, h, lambda, mu);
            s.clock = nodes[j + 1].t;
            idle_time += 0.5 * h * (empty_before + s.probs[0]);
            if nodes[j + 1].arrival {
                s.apply_scheduled_arrival();
            }
        }
        let total = state.as_ref().map_or(0.0, |s| s.total());
        Ok(Trajectory {
            start,
            samples,
            cdf_terminal: cdf,
            reference: reference.unwrap_or(0.0),
            shed_mass: (1.0 - total).max(0.0),
            idle_time,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::Schedule;

    fn aug(times: &[f64]) -> AugmentedSchedule {
        Schedule::new(times.to_vec(), 5.0).unwrap().augmented()
    }

    #[test]
    fn appointments_are_nodes() {
        let nodes = build_nodes(&aug(&[1.0, 3.0, 5.0]), 0.01, 0.0, None);
        assert_eq!(nodes.first().unwrap().t, 0.0);
        assert_eq!(nodes.last().unwrap().t, 5.0);
        assert!(nodes.last().unwrap().arrival);
        for a in [1.0, 3.0] {
            let n = nodes.iter().find(|n| n.t == a).expect("appointment node");
            assert!(n.arrival);
        }
        assert_eq!(nodes.iter().filter(|n| n.arrival).count(), 3);
        assert_eq!(nodes.len(), 501);
        assert!(nodes.windows(2).all(|w| w[1].t > w[0].t));
    }

    #[test]
    fn residual_steps_at_segment_ends() {
        let nodes = build_nodes(&aug(&[0.015]), 0.01, 0.0, None);
        let ts: Vec<f64> = nodes.iter().take(4).map(|n| n.t).collect();
        assert_eq!(ts[0], 0.0);
        assert_eq!(ts[1], 0.01);
        assert_eq!(ts[2], 0.015);
        assert!(nodes[2].arrival);
    }

    #[test]
    fn opening_appointment_collapses_first_segment() {
        let nodes = build_nodes(&aug(&[0.0, 2.0, 5.0]), 0.01, 0.0, None);
        assert_eq!(nodes[0].t, 0.0);
        assert_eq!(nodes[0].segment, Some(1));
        assert!(!nodes[0].arrival);
    }

    #[test]
    fn early_nodes_precede_opening() {
        let nodes = build_nodes(&aug(&[1.0]), 0.01, -0.025, None);
        let ts: Vec<f64> = nodes.iter().take(4).map(|n| n.t).collect();
        assert_eq!(ts[0], -0.025);
        assert!((ts[1] + 0.02).abs() < 1e-15);
        assert!((ts[2] + 0.01).abs() < 1e-15);
        assert_eq!(ts[3], 0.0);
        assert_eq!(nodes[3].segment, Some(0));
    }

    #[test]
    fn extra_node_is_inserted_in_order() {
        let nodes = build_nodes(&aug(&[1.0]), 0.01, 0.0, Some(0.4567));
        let pos = nodes.iter().position(|n| n.t == 0.4567).unwrap();
        assert!(nodes[pos - 1].t < 0.4567 && nodes[pos + 1].t > 0.4567);
    }
}

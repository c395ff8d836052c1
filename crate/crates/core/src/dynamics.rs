//! Truncated birth–death state `P_n(t)` of the number of customers in system.
//!
//! Between appointments the state follows the forward equations with walk-in
//! arrival rate `lambda * f(t)` and service rate `mu`; at an appointment the whole
//! distribution shifts up by one. Before opening nobody is served and the state is
//! Poisson with mean `lambda * F(t)`.

use serde::{Deserialize, Serialize};

use crate::distributions::poisson_weights_into;
use crate::error::{Error, Result};
use crate::waiting::WaitTable;

/// Probabilities of `0..=N_max` customers in system at `clock`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub probs: Vec<f64>,
    pub clock: f64,
    /// Probability mass pushed past the top index so far.
    pub shed: f64,
}

impl StateVector {
    /// Empty system at time `clock`.
    pub fn empty(n_max: usize, clock: f64) -> Self {
        let mut probs = vec![0.0; n_max + 1];
        probs[0] = 1.0;
        Self { probs, clock, shed: 0.0 }
    }

    /// Poisson(`mean`) truncated at `k_max` (entries above stay zero).
    pub fn poisson(n_max: usize, k_max: usize, mean: f64, clock: f64) -> Self {
        let mut probs = vec![0.0; n_max + 1];
        let top = k_max.min(n_max);
        poisson_weights_into(mean, 1.0, &mut probs[..=top]);
        Self { probs, clock, shed: 0.0 }
    }

    pub fn n_max(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// One explicit Euler step of length `delta` with arrival density `f_t`.
    pub fn step_forward(&mut self, f_t: f64, delta: f64, lambda: f64, mu: f64) {
        let a = lambda * f_t * delta;
        let s = mu * delta;
        let p = &mut self.probs;
        let top = p.len() - 1;
        let mut carry = p[0];
        p[0] = p[0] - a * p[0] + s * p.get(1).copied().unwrap_or(0.0);
        for n in 1..=top {
            let cur = p[n];
            let above = if n < top { p[n + 1] } else { 0.0 };
            p[n] = cur - (a + s) * cur + a * carry + s * above;
            carry = cur;
        }
        // arrivals out of the top state leave the truncated space
        self.shed += a * carry;
        for v in p.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        self.clock += delta;
    }

    /// [`step_forward`](Self::step_forward) refusing to pass `boundary`.
    pub fn step_within(&mut self, f_t: f64, delta: f64, lambda: f64, mu: f64, boundary: f64) -> Result<()> {
        if self.clock + delta > boundary + 1e-12 * boundary.abs().max(1.0) {
            return Err(Error::CrossesBoundary { from: self.clock, step: delta, boundary });
        }
        self.step_forward(f_t, delta, lambda, mu);
        Ok(())
    }

    /// A scheduled customer joins: `P_{n+1} <- P_n`, `P_0 <- 0`.
    pub fn apply_scheduled_arrival(&mut self) {
        let p = &mut self.probs;
        self.shed += p[p.len() - 1];
        p.rotate_right(1);
        p[0] = 0.0;
    }
}

/// Largest `n` summed over in segment `k`: every read `w(n + 1)` must stay valid.
pub fn summation_limit(state: &StateVector, table: &WaitTable, k: usize) -> usize {
    match table.valid_limit(k) {
        Some(lim) => (lim - 1).min(state.n_max()),
        None => state.n_max(),
    }
}

/// `E_w(t) = sum_n P_n(t) w_k(n, t)`.
pub fn expected_wait(state: &StateVector, table: &WaitTable, k: usize) -> Result<f64> {
    check_segment(state, table, k)?;
    let top = summation_limit(state, table, k);
    let mut w = vec![0.0; top + 1];
    table.waits_into(k, state.clock, &mut w);
    Ok(state.probs[..=top].iter().zip(&w).map(|(p, w)| p * w).sum())
}

fn check_segment(state: &StateVector, table: &WaitTable, k: usize) -> Result<()> {
    let pts = table.points();
    if k + 1 >= pts.len() {
        return Err(Error::InvalidParameter(format!("segment {k} out of range")));
    }
    let (start, end) = (pts[k], pts[k + 1]);
    let t = state.clock;
    let slack = 1e-9 * end.abs().max(1.0);
    if t < start - slack || t > end + slack {
        return Err(Error::SegmentMismatch { segment: k, t, start, end });
    }
    Ok(())
}

/// Terms of the zero-derivative condition on `E_w(t)` in segment `k`.
#[derive(Debug, Clone, Copy)]
pub struct DensityTerms {
    pub expected_wait: f64,
    /// `mu sum P_{n+1} dw_n - sum P_n dw_n/dt`
    pub numerator: f64,
    /// `lambda sum P_n dw_n`, with `dw_n = w(n+1) - w(n)`
    pub denominator: f64,
}

impl DensityTerms {
    pub fn density(&self, t: f64) -> Result<f64> {
        if !(self.denominator > 0.0) {
            return Err(Error::DegenerateState { t });
        }
        Ok(self.numerator / self.denominator)
    }
}

/// Evaluates `E_w(t)` together with the numerator and denominator of the
/// equilibrium density, reusing one pass over the wait function.
pub fn density_terms(state: &StateVector, table: &WaitTable, k: usize, lambda: f64) -> Result<DensityTerms> {
    check_segment(state, table, k)?;
    let top = summation_limit(state, table, k);
    let t = state.clock;
    let mut w = vec![0.0; top + 2];
    let mut dw = vec![0.0; top + 1];
    table.waits_into(k, t, &mut w);
    table.derivatives_into(k, t, &mut dw);
    let p = &state.probs;
    let mu = table.mu();
    let mut ew = 0.0;
    let mut num = 0.0;
    let mut den = 0.0;
    for n in 0..=top {
        let gap = w[n + 1] - w[n];
        ew += p[n] * w[n];
        if n < p.len() - 1 {
            num += mu * p[n + 1] * gap;
        }
        num -= p[n] * dw[n];
        den += p[n] * gap;
    }
    Ok(DensityTerms {
        expected_wait: ew,
        numerator: num,
        denominator: lambda * den,
    })
}

/// Density that keeps `E_w` stationary at the state's clock. Negative values
/// mean the instant is off the support; callers clamp.
pub fn equilibrium_density(state: &StateVector, table: &WaitTable, k: usize, lambda: f64) -> Result<f64> {
    density_terms(state, table, k, lambda)?.density(state.clock)
}

/// Probability that a tagged arrival in an atom of size `p` at time 0 finds
/// exactly `n` other atom arrivals ahead, for `n = 0..=k_max`.
pub fn atom_position_weights(p: f64, lambda: f64, k_max: usize) -> Vec<f64> {
    let mut pois = vec![0.0; k_max + 1];
    poisson_weights_into(p * lambda, 1.0, &mut pois);
    let mut out = vec![0.0; k_max + 1];
    let mut tail = 0.0;
    for i in (0..=k_max).rev() {
        tail += pois[i] / (i + 1) as f64;
        out[i] = tail;
    }
    out
}

/// Expected wait of a walk-in in an atom of mass `p` at opening; a customer
/// scheduled at 0 is served first.
pub fn atom_expected_wait(p: f64, lambda: f64, table: &WaitTable, k_max: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("atom mass must lie in [0, 1], got {p}")));
    }
    let offset = usize::from(table.customers() > 0 && table.points()[1] == 0.0);
    let weights = atom_position_weights(p, lambda, k_max);
    weights
        .iter()
        .enumerate()
        .map(|(n, q)| Ok(q * table.boundary(offset, n + offset)?))
        .sum()
}

/// Wait increments `W(n + 1 + o) - W(n + o)` at opening, `o` the opening offset.
pub fn opening_gaps(table: &WaitTable, k_max: usize) -> Result<Vec<f64>> {
    let offset = usize::from(table.customers() > 0 && table.points()[1] == 0.0);
    (0..=k_max)
        .map(|n| Ok(table.boundary(offset, n + 1 + offset)? - table.boundary(offset, n + offset)?))
        .collect()
}

/// Density before opening given the current cdf value: the queue position
/// gained by coming earlier must exactly offset the extra time spent waiting.
pub fn early_density(cdf: f64, lambda: f64, gaps: &[f64]) -> f64 {
    let mut pois = vec![0.0; gaps.len()];
    poisson_weights_into(lambda * cdf, 1.0, &mut pois);
    let den: f64 = pois.iter().zip(gaps).map(|(p, g)| p * g).sum();
    1.0 / (lambda * den)
}

/// Expected wait of an arrival at `t < 0` when the cdf there is `cdf`.
pub fn early_expected_wait(t: f64, cdf: f64, lambda: f64, table: &WaitTable, k_max: usize) -> Result<f64> {
    let offset = usize::from(table.customers() > 0 && table.points()[1] == 0.0);
    let mut pois = vec![0.0; k_max + 1];
    poisson_weights_into(lambda * cdf, 1.0, &mut pois);
    let mut ew = -t;
    for (n, p) in pois.iter().enumerate() {
        ew += p * table.boundary(offset, n + offset)?;
    }
    Ok(ew)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::Schedule;
    use approx::assert_relative_eq;

    fn table(times: &[f64], mu: f64, n_max: usize) -> WaitTable {
        WaitTable::build(&Schedule::new(times.to_vec(), 5.0).unwrap().augmented(), mu, n_max).unwrap()
    }

    #[test]
    fn empty_system_without_arrivals_is_absorbing() {
        let mut s = StateVector::empty(5, 0.0);
        s.step_forward(0.0, 0.01, 2.0, 1.0);
        assert_eq!(s.probs, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn single_euler_departure() {
        let mut s = StateVector { probs: vec![0.0, 1.0, 0.0, 0.0], clock: 0.0, shed: 0.0 };
        s.step_forward(0.0, 0.01, 2.0, 1.0);
        assert_relative_eq!(s.probs[0], 0.01);
        assert_relative_eq!(s.probs[1], 0.99);
        assert_relative_eq!(s.clock, 0.01);
    }

    #[test]
    fn step_within_rejects_crossing() {
        let mut s = StateVector::empty(3, 0.995);
        assert!(matches!(
            s.step_within(0.0, 0.01, 1.0, 1.0, 1.0),
            Err(Error::CrossesBoundary { .. })
        ));
        assert!(s.step_within(0.0, 0.005, 1.0, 1.0, 1.0).is_ok());
    }

    #[test]
    fn scheduled_arrival_shifts() {
        let mut s = StateVector { probs: vec![1.0, 0.0, 0.0], clock: 1.0, shed: 0.0 };
        s.apply_scheduled_arrival();
        assert_eq!(s.probs, vec![0.0, 1.0, 0.0]);

        let mut s = StateVector { probs: vec![0.5, 0.3, 0.2, 0.0], clock: 1.0, shed: 0.0 };
        s.apply_scheduled_arrival();
        assert_eq!(s.probs, vec![0.0, 0.5, 0.3, 0.2]);

        let mut s = StateVector::empty(4, 0.0);
        for _ in 0..3 {
            s.apply_scheduled_arrival();
        }
        assert_eq!(s.probs[3], 1.0);
    }

    #[test]
    fn expected_wait_simple_states() {
        let tab = table(&[1.0, 3.0], 1.0, 8);
        let s = StateVector::empty(8, 0.5);
        assert_eq!(expected_wait(&s, &tab, 0).unwrap(), 0.0);
        let mut s = StateVector::empty(8, 4.0);
        s.probs[0] = 0.0;
        s.probs[1] = 1.0;
        assert_relative_eq!(expected_wait(&s, &tab, 2).unwrap(), 1.0);
        assert!(expected_wait(&s, &tab, 0).is_err());
    }

    #[test]
    fn last_segment_density_simplifies() {
        let tab = table(&[1.0], 1.0, 8);
        let mut s = StateVector::empty(8, 2.0);
        s.probs = vec![0.3, 0.25, 0.2, 0.1, 0.08, 0.04, 0.02, 0.01, 0.0];
        let f = equilibrium_density(&s, &tab, 1, 2.0).unwrap();
        assert_relative_eq!(f, 0.5 * (1.0 - 0.3), max_relative = 1e-12);

        let s = StateVector::empty(8, 2.0);
        assert_eq!(equilibrium_density(&s, &tab, 1, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_state_is_reported() {
        let tab = table(&[1.0], 1.0, 4);
        let s = StateVector { probs: vec![0.0; 5], clock: 2.0, shed: 0.0 };
        assert!(matches!(
            equilibrium_density(&s, &tab, 1, 2.0),
            Err(Error::DegenerateState { .. })
        ));
    }

    #[test]
    fn atom_wait_limits() {
        let tab = table(&[1.0, 3.0, 5.0], 1.0, 12);
        assert_eq!(atom_expected_wait(0.0, 2.0, &tab, 8).unwrap(), 0.0);
        let tab0 = table(&[0.0, 2.0, 5.0], 1.0, 12);
        assert_relative_eq!(
            atom_expected_wait(0.0, 2.0, &tab0, 8).unwrap(),
            tab0.wait_given_queue(1, 1, 0.0).unwrap(),
            max_relative = 1e-14
        );
        assert!(atom_expected_wait(1.5, 2.0, &tab, 8).is_err());
    }

    #[test]
    fn early_density_at_empty_queue() {
        let tab = table(&[], 1.0, 8);
        let gaps = opening_gaps(&tab, 7).unwrap();
        assert_relative_eq!(early_density(0.0, 2.0, &gaps), 0.5, max_relative = 1e-14);

        let tab0 = table(&[0.0, 2.0], 1.0, 10);
        let gaps = opening_gaps(&tab0, 7).unwrap();
        let expected = 1.0 / (2.0 * (tab0.boundary(1, 2).unwrap() - tab0.boundary(1, 1).unwrap()));
        assert_relative_eq!(early_density(0.0, 2.0, &gaps), expected, max_relative = 1e-14);
    }
}

//! Conditional waiting time of a walk-in who finds `n` customers ahead.
//!
//! For an arrival at `t` in segment `k` (`T(k) <= t < T(k+1)`) with `tau = T(k+1) - t`,
//!
//! ```text
//! w_k(n, t) = E(tau; n, mu) + sum_{i<n} Pois(tau; i) * (tau + W_{k+1}(n - i + 1))
//! ```
//!
//! where `W_k(n) = w_k(n, T(k))` are the boundary values. The scheduled customer
//! arriving at `T(k+1)` is placed ahead of the waiting walk-in, hence the `+1`.
//! The last segment has no future appointments and `w_M(n, t) = n / mu`.
//!
//! Row `k` of the boundary table reads row `k + 1` one index higher, so with
//! `N_max` columns row `k` is only valid for `n <= N_max - (M - k)`. The terminal
//! row is closed-form and valid for every `n`.

use crate::distributions::poisson_weights_into;
use crate::error::{Error, Result};
use crate::schedule::AugmentedSchedule;

/// Boundary waiting times `W_k(n)` for `k = 0..=M`, `n = 0..=N_max`.
#[derive(Debug, Clone)]
pub struct WaitTable {
    points: Vec<f64>,
    mu: f64,
    n_max: usize,
    rows: Vec<Vec<f64>>,
}

impl WaitTable {
    /// Backward recursion from the terminal row `W_M(n) = n / mu`.
    pub fn build(schedule: &AugmentedSchedule, mu: f64, n_max: usize) -> Result<Self> {
        if n_max < 1 {
            return Err(Error::InvalidParameter("n_max must be at least 1".into()));
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::Domain(format!("service rate must be positive, got {mu}")));
        }
        let points = schedule.points().to_vec();
        if points.windows(2).any(|w| !(w[1] >= w[0])) {
            return Err(Error::InvalidSchedule("augmented points must be nondecreasing".into()));
        }
        let m = points.len() - 2;
        let mut rows = vec![vec![0.0; n_max + 1]; m + 1];
        for (n, w) in rows[m].iter_mut().enumerate() {
            *w = n as f64 / mu;
        }
        let mut pois = vec![0.0; n_max + 2];
        for k in (0..m).rev() {
            let width = points[k + 1] - points[k];
            poisson_weights_into(width, mu, &mut pois);
            let valid = n_max - (m - k);
            let (head, tail) = rows.split_at_mut(k + 1);
            let next = &tail[0];
            let row = &mut head[k];
            for n in 1..=valid {
                row[n] = wait_from_weights(&pois, mu, width, n, next);
            }
            // entries above `valid` stay NaN so that accidental reads are loud
            for slot in row.iter_mut().skip(valid + 1) {
                *slot = f64::NAN;
            }
        }
        Ok(Self { points, mu, n_max, rows })
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn customers(&self) -> usize {
        self.points.len() - 2
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Largest queue length readable in segment `k`, `None` for the unbounded terminal row.
    pub fn valid_limit(&self, k: usize) -> Option<usize> {
        let m = self.customers();
        (k < m).then(|| self.n_max - (m - k))
    }

    pub fn is_valid(&self, k: usize, n: usize) -> bool {
        k <= self.customers() && self.valid_limit(k).is_none_or(|lim| n <= lim)
    }

    /// `W_k(n)`, the wait of an arrival at the start of segment `k`.
    pub fn boundary(&self, k: usize, n: usize) -> Result<f64> {
        self.check_cell(k, n)?;
        Ok(self.boundary_unchecked(k, n))
    }

    fn boundary_unchecked(&self, k: usize, n: usize) -> f64 {
        if k == self.customers() {
            n as f64 / self.mu
        } else {
            self.rows[k][n]
        }
    }

    fn check_cell(&self, k: usize, n: usize) -> Result<()> {
        if k > self.customers() {
            return Err(Error::InvalidParameter(format!("segment {k} out of range")));
        }
        if !self.is_valid(k, n) {
            return Err(Error::OutsideValidity {
                segment: k,
                n,
                max: self.valid_limit(k).unwrap_or(usize::MAX),
            });
        }
        Ok(())
    }

    fn check_time(&self, k: usize, t: f64) -> Result<()> {
        let m = self.customers();
        let (start, end) = (self.points[k], self.points[k + 1]);
        let inside = if k == m { t >= start && t <= end } else { t >= start && t < end };
        if inside {
            Ok(())
        } else {
            Err(Error::SegmentMismatch { segment: k, t, start, end })
        }
    }

    /// `w_k(n, t)` for an arrival at `t` inside segment `k`.
    pub fn wait_given_queue(&self, k: usize, n: usize, t: f64) -> Result<f64> {
        self.check_cell(k, n)?;
        self.check_time(k, t)?;
        let mut out = vec![0.0; n + 1];
        self.waits_into(k, t, &mut out);
        Ok(out[n])
    }

    /// `d/dt w_k(n, t)`.
    pub fn wait_time_derivative(&self, k: usize, n: usize, t: f64) -> Result<f64> {
        self.check_cell(k, n)?;
        self.check_time(k, t)?;
        let mut out = vec![0.0; n + 1];
        self.derivatives_into(k, t, &mut out);
        Ok(out[n])
    }

    /// Fills `out[n] = w_k(n, t)` for every `n < out.len()`. The caller keeps `out`
    /// inside the valid region and `t` inside segment `k`.
    pub fn waits_into(&self, k: usize, t: f64, out: &mut [f64]) {
        if k == self.customers() {
            for (n, w) in out.iter_mut().enumerate() {
                *w = n as f64 / self.mu;
            }
            return;
        }
        debug_assert!(self.valid_limit(k).is_none_or(|lim| out.len() <= lim + 1));
        let tau = (self.points[k + 1] - t).max(0.0);
        let mut pois = vec![0.0; out.len() + 1];
        poisson_weights_into(tau, self.mu, &mut pois);
        let next = &self.rows[k + 1];
        let next_is_terminal = k + 1 == self.customers();
        for (n, w) in out.iter_mut().enumerate() {
            *w = if n == 0 {
                0.0
            } else if next_is_terminal {
                wait_from_weights_terminal(&pois, self.mu, tau, n)
            } else {
                wait_from_weights(&pois, self.mu, tau, n, next)
            };
        }
    }

    /// Fills `out[n] = d/dt w_k(n, t)`.
    pub fn derivatives_into(&self, k: usize, t: f64, out: &mut [f64]) {
        if k == self.customers() {
            out.iter_mut().for_each(|d| *d = 0.0);
            return;
        }
        let tau = (self.points[k + 1] - t).max(0.0);
        let mu = self.mu;
        let mut pois = vec![0.0; out.len() + 1];
        poisson_weights_into(tau, mu, &mut pois);
        let m = self.customers();
        let next = |j: usize| {
            if k + 1 == m {
                j as f64 / mu
            } else {
                self.rows[k + 1][j]
            }
        };
        for (n, d) in out.iter_mut().enumerate() {
            if n == 0 {
                *d = 0.0;
                continue;
            }
            // d/dtau of the truncated Erlang mean and of the boundary sum; d tau / dt = -1
            let mut dtau = tau * mu * pois[n - 1];
            for i in 0..n {
                let prev = if i == 0 { 0.0 } else { pois[i - 1] };
                dtau += pois[i] + mu * (prev - pois[i]) * (tau + next(n - i + 1));
            }
            *d = -dtau;
        }
    }
}

/// Erlang part plus boundary part of the waiting time, with `pois[i] = Pois(tau; i)`.
fn wait_from_weights(pois: &[f64], mu: f64, tau: f64, n: usize, next: &[f64]) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let mut head = 0.0;
    let mut boundary = 0.0;
    for i in 0..n {
        head += pois[i];
        boundary += pois[i] * (tau + next[n - i + 1]);
    }
    let erlang_mean = n as f64 / mu * (1.0 - head - pois[n]).max(0.0);
    erlang_mean + boundary
}

fn wait_from_weights_terminal(pois: &[f64], mu: f64, tau: f64, n: usize) -> f64 {
    let mut head = 0.0;
    let mut boundary = 0.0;
    for i in 0..n {
        head += pois[i];
        boundary += pois[i] * (tau + (n - i + 1) as f64 / mu);
    }
    let erlang_mean = n as f64 / mu * (1.0 - head - pois[n]).max(0.0);
    erlang_mean + boundary
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::truncated_erlang_mean;
    use crate::schedule::Schedule;
    use approx::assert_relative_eq;

    fn table(times: &[f64], mu: f64, n_max: usize) -> WaitTable {
        let s = Schedule::new(times.to_vec(), 5.0).unwrap();
        WaitTable::build(&s.augmented(), mu, n_max).unwrap()
    }

    #[test]
    fn empty_schedule_is_terminal_row() {
        let t = table(&[], 2.0, 4);
        assert_eq!(t.boundary(0, 3).unwrap(), 1.5);
        assert_eq!(t.wait_given_queue(0, 4, 4.9).unwrap(), 2.0);
        assert_eq!(t.wait_time_derivative(0, 4, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn nobody_ahead_never_waits() {
        let t = table(&[1.0, 3.0, 5.0], 1.0, 12);
        for k in 0..=3 {
            assert_eq!(t.boundary(k, 0).unwrap(), 0.0);
        }
        assert_eq!(t.wait_given_queue(1, 0, 2.0).unwrap(), 0.0);
        assert_eq!(t.wait_time_derivative(1, 0, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn single_appointment_closed_form() {
        // one ahead at t = 0, appointment at 1
        let t = table(&[1.0], 1.0, 4);
        let e = (-1.0f64).exp();
        let expected = truncated_erlang_mean(1.0, 1, 1.0).unwrap() + e * (1.0 + 2.0);
        assert_relative_eq!(t.boundary(0, 1).unwrap(), expected, max_relative = 1e-13);
    }

    #[test]
    fn validity_region_is_triangular() {
        let t = table(&[1.0, 3.0, 5.0], 1.0, 12);
        assert_eq!(t.valid_limit(0), Some(9));
        assert_eq!(t.valid_limit(2), Some(11));
        assert_eq!(t.valid_limit(3), None);
        assert!(t.boundary(0, 10).is_err());
        assert!(t.boundary(0, 9).is_ok());
    }

    #[test]
    fn segment_mismatch_is_reported() {
        let t = table(&[1.0, 3.0], 1.0, 6);
        assert!(matches!(
            t.wait_given_queue(0, 1, 1.5),
            Err(Error::SegmentMismatch { .. })
        ));
        assert!(t.wait_given_queue(2, 1, 5.0).is_ok());
    }

    #[test]
    fn left_limit_at_appointment_adds_one_position() {
        let t = table(&[1.0, 3.0, 5.0], 1.0, 12);
        for n in 1..8 {
            let left = t.wait_given_queue(0, n, 1.0 - 1e-6).unwrap();
            let right = t.wait_given_queue(1, n + 1, 1.0).unwrap();
            assert!((left - right).abs() < 1e-4, "n={n}: {left} vs {right}");
        }
    }

    #[test]
    fn zero_width_segment_shifts_queue() {
        // appointment at 0 collapses segment 0
        let t = table(&[0.0, 2.0], 1.0, 8);
        for n in 1..=t.valid_limit(0).unwrap() {
            assert_relative_eq!(
                t.boundary(0, n).unwrap(),
                t.boundary(1, n + 1).unwrap(),
                max_relative = 1e-14
            );
        }
    }
}

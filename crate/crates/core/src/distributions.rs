//! Poisson and Erlang primitives over a service rate `mu`.
//!
//! The truncated Erlang mean `E(t; n, mu) = int_0^t x f_Erl(x; n, mu) dx` is
//! evaluated through `(n / mu) * F_Erl(t; n + 1, mu)`, which only needs the
//! Poisson tail and never forms a factorial.

use crate::error::{Error, Result};

fn check(t: f64, mu: f64) -> Result<()> {
    if t.is_nan() || t < 0.0 {
        return Err(Error::Domain(format!("time must be nonnegative, got {t}")));
    }
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::Domain(format!("service rate must be positive, got {mu}")));
    }
    Ok(())
}

/// Poisson weights `e^{-mu t} (mu t)^i / i!` for `i = 0..len`, by forward recurrence.
///
/// Unchecked; callers validate `t >= 0`, `mu > 0`.
pub fn poisson_weights_into(t: f64, mu: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    let x = mu * t;
    if x == f64::INFINITY {
        out.iter_mut().for_each(|p| *p = 0.0);
        return;
    }
    let mut p = (-x).exp();
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = p;
        p *= x / (i + 1) as f64;
    }
}

/// Vector of the first `len` Poisson weights.
pub fn poisson_weights(t: f64, mu: f64, len: usize) -> Result<Vec<f64>> {
    check(t, mu)?;
    let mut out = vec![0.0; len];
    poisson_weights_into(t, mu, &mut out);
    Ok(out)
}

/// Probability of exactly `i` service completions in `t` time units.
pub fn poisson_weight(t: f64, i: usize, mu: f64) -> Result<f64> {
    check(t, mu)?;
    let mut buf = vec![0.0; i + 1];
    poisson_weights_into(t, mu, &mut buf);
    Ok(buf[i])
}

/// `P(Erl(n, mu) <= t) = sum_{i>=n} Pois(t; i)`.
pub fn erlang_cdf(t: f64, n: usize, mu: f64) -> Result<f64> {
    check(t, mu)?;
    if n == 0 {
        return Err(Error::Domain("Erlang shape must be at least 1".into()));
    }
    Ok(erlang_cdf_unchecked(t, n, mu))
}

pub(crate) fn erlang_cdf_unchecked(t: f64, n: usize, mu: f64) -> f64 {
    if t == f64::INFINITY {
        return 1.0;
    }
    let x = mu * t;
    let mut p = (-x).exp();
    let mut head = 0.0;
    for i in 0..n {
        head += p;
        p *= x / (i + 1) as f64;
    }
    if x >= n as f64 {
        return (1.0 - head).clamp(0.0, 1.0);
    }
    // left of the mode: sum the tail itself, its terms decrease geometrically
    let mut tail = 0.0;
    let mut i = n;
    while p > tail * 1e-17 && p > 0.0 {
        tail += p;
        i += 1;
        p *= x / i as f64;
    }
    tail.min(1.0)
}

/// Truncated Erlang mean `int_0^t x f_Erl(x; n, mu) dx`.
pub fn truncated_erlang_mean(t: f64, n: usize, mu: f64) -> Result<f64> {
    check(t, mu)?;
    if n == 0 {
        return Err(Error::Domain("Erlang shape must be at least 1".into()));
    }
    Ok(n as f64 / mu * erlang_cdf_unchecked(t, n + 1, mu))
}

/// Smallest `k` such that the Poisson(`lambda`) cdf at `k` exceeds `c`.
pub fn truncation_level(lambda: f64, c: f64) -> usize {
    let mut pmf = (-lambda).exp();
    let mut cdf = pmf;
    let mut k = 0usize;
    while cdf <= c {
        k += 1;
        pmf *= lambda / k as f64;
        cdf += pmf;
        // past the mode with an underflowed pmf the cdf can no longer move
        if pmf == 0.0 && k as f64 > lambda {
            break;
        }
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn poisson_weight_boundary_values() {
        assert_eq!(poisson_weight(0.0, 0, 1.0).unwrap(), 1.0);
        assert_eq!(poisson_weight(0.0, 3, 1.0).unwrap(), 0.0);
        assert_relative_eq!(
            poisson_weight(2.0, 1, 1.0).unwrap(),
            2.0 * (-2.0f64).exp(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn domain_errors() {
        assert!(poisson_weight(-1.0, 0, 1.0).is_err());
        assert!(poisson_weight(1.0, 0, 0.0).is_err());
        assert!(erlang_cdf(1.0, 0, 1.0).is_err());
        assert!(truncated_erlang_mean(f64::NAN, 1, 1.0).is_err());
    }

    #[test]
    fn erlang_cdf_values() {
        assert_eq!(erlang_cdf(0.0, 1, 1.0).unwrap(), 0.0);
        assert_eq!(erlang_cdf(f64::INFINITY, 3, 1.0).unwrap(), 1.0);
        assert_relative_eq!(erlang_cdf(1.0, 1, 1.0).unwrap(), 1.0 - (-1.0f64).exp(), max_relative = 1e-14);
    }

    #[test]
    fn truncated_mean_values() {
        assert_eq!(truncated_erlang_mean(0.0, 5, 1.0).unwrap(), 0.0);
        assert_relative_eq!(truncated_erlang_mean(f64::INFINITY, 5, 2.0).unwrap(), 2.5);
        // int_0^1 x e^-x dx
        assert_relative_eq!(
            truncated_erlang_mean(1.0, 1, 1.0).unwrap(),
            1.0 - 2.0 * (-1.0f64).exp(),
            max_relative = 1e-13
        );
    }

    #[test]
    fn truncation_levels() {
        assert_eq!(truncation_level(2.0, 0.999), 8);
        assert_eq!(truncation_level(4.0, 0.999), 11);
        assert_eq!(truncation_level(0.01, 0.5), 0);
    }
}

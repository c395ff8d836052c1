//! Checks a solved strategy against the equilibrium conditions by recomputing
//! `E_w(t)` along the whole grid under the strategy's own densities.

use serde::{Deserialize, Serialize};

use super::solver::replay;
use super::EquilibriumResult;
use crate::error::Result;

/// Pass thresholds of [`VerificationReport::passed`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyTolerances {
    pub on_support_rel: f64,
    /// Off-support margin may dip to `-off_support_rel * E_w`.
    pub off_support_rel: f64,
    pub cdf_tol: f64,
}

impl Default for VerifyTolerances {
    fn default() -> Self {
        Self { on_support_rel: 0.02, off_support_rel: 1e-3, cdf_tol: 0.005 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub expected_wait: f64,
    /// `max |E_w(t) - E_w| / E_w` over the support (atom included).
    pub on_support_max_rel_dev: f64,
    /// `min (E_w(t) - E_w)` over grid points in `[0, T)` outside the support.
    pub off_support_min_margin: f64,
    pub support_points: usize,
    pub off_support_points: usize,
    pub cdf_terminal: f64,
    pub cdf_monotone: bool,
    pub density_nonnegative: bool,
    /// Appointments in `(0, T)` where the density is positive right after the arrival.
    pub gap_violations: Vec<f64>,
    /// Atom must vanish with early arrivals and exist when nobody is booked at 0.
    pub atom_consistent: bool,
    pub shed_mass: f64,
}

impl VerificationReport {
    pub fn passed(&self, tol: &VerifyTolerances) -> bool {
        self.on_support_max_rel_dev <= tol.on_support_rel
            && self.off_support_min_margin >= -tol.off_support_rel * self.expected_wait
            && (self.cdf_terminal - 1.0).abs() <= tol.cdf_tol
            && self.cdf_monotone
            && self.density_nonnegative
            && self.gap_violations.is_empty()
            && self.atom_consistent
    }
}

/// Recomputes `E_w(t)` on the full grid and checks the support/gap/atom structure.
pub fn verify_equilibrium(result: &EquilibriumResult) -> Result<VerificationReport> {
    let tr = replay(result)?;
    let ew = result.expected_wait;
    let scale = if ew.abs() > 0.0 { ew.abs() } else { 1.0 };
    let horizon = result.params.horizon;
    let mut on_dev: f64 = 0.0;
    let mut off_margin = f64::INFINITY;
    let (mut n_on, mut n_off) = (0usize, 0usize);
    for (i, s) in tr.samples.iter().enumerate() {
        let atom_here = i == 0 && result.atom > 0.0;
        if s.density > 0.0 || atom_here {
            n_on += 1;
            on_dev = on_dev.max((s.expected_wait - ew).abs() / scale);
        } else if s.t >= 0.0 && s.t < horizon {
            n_off += 1;
            off_margin = off_margin.min(s.expected_wait - ew);
        }
    }
    if n_off == 0 {
        off_margin = 0.0;
    }

    let grid = &result.grid;
    let cdf_monotone = grid.windows(2).all(|w| w[1].cdf >= w[0].cdf - 1e-12);
    let density_nonnegative = grid.iter().all(|g| g.density >= 0.0);
    let gap_violations = result
        .schedule
        .iter()
        .copied()
        .filter(|&a| a > 0.0 && a < horizon)
        .filter(|&a| {
            grid.iter()
                .find(|g| (g.t - a).abs() <= 1e-8)
                .is_none_or(|g| g.density > 0.0)
        })
        .collect();
    let booked_at_zero = result.schedule.first() == Some(&0.0);
    let atom_consistent = if result.early {
        result.atom == 0.0
    } else if !booked_at_zero {
        result.atom > 0.0
    } else {
        true
    };

    Ok(VerificationReport {
        expected_wait: ew,
        on_support_max_rel_dev: on_dev,
        off_support_min_margin: off_margin,
        support_points: n_on,
        off_support_points: n_off,
        cdf_terminal: tr.cdf_terminal,
        cdf_monotone,
        density_nonnegative,
        gap_violations,
        atom_consistent,
        shed_mass: tr.shed_mass,
    })
}

//! Appointment schedules and their 0/T-padded form.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Appointment instants of the `M` scheduled customers on `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    times: Vec<f64>,
    horizon: f64,
}

impl Schedule {
    /// At most one customer per instant: times must be strictly increasing inside `[0, T]`.
    pub fn new(times: Vec<f64>, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidSchedule(format!("horizon must be positive, got {horizon}")));
        }
        for (i, &t) in times.iter().enumerate() {
            if !t.is_finite() || t < 0.0 || t > horizon {
                return Err(Error::InvalidSchedule(format!(
                    "appointment {} at {t} lies outside [0, {horizon}]",
                    i + 1
                )));
            }
            if i > 0 && t <= times[i - 1] {
                return Err(Error::InvalidSchedule(format!(
                    "appointments must be strictly increasing ({} then {t})",
                    times[i - 1]
                )));
            }
        }
        Ok(Self { times, horizon })
    }

    /// Parses a comma-separated list such as `"1,3,5"`. An empty string is the empty schedule.
    pub fn parse(text: &str, horizon: f64) -> Result<Self> {
        let trimmed = text.trim();
        let times = if trimmed.is_empty() {
            Vec::new()
        } else {
            trimmed
                .split(',')
                .map(|tok| {
                    tok.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::InvalidSchedule(format!("not a number: {tok:?}")))
                })
                .collect::<Result<Vec<_>>>()?
        };
        Self::new(times, horizon)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// True when the first appointment opens the day.
    pub fn starts_at_zero(&self) -> bool {
        self.times.first() == Some(&0.0)
    }

    pub fn augmented(&self) -> AugmentedSchedule {
        let mut points = Vec::with_capacity(self.times.len() + 2);
        points.push(0.0);
        points.extend_from_slice(&self.times);
        points.push(self.horizon);
        AugmentedSchedule { points }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.times.iter().map(|t| format!("{t}")).collect();
        write!(f, "{}", parts.join(","))
    }
}

/// `(0, T_s(1), ..., T_s(M), T)`. Segment `k` is `[points[k], points[k+1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSchedule {
    points: Vec<f64>,
}

impl AugmentedSchedule {
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Number of scheduled customers `M`.
    pub fn customers(&self) -> usize {
        self.points.len() - 2
    }

    pub fn horizon(&self) -> f64 {
        *self.points.last().unwrap()
    }

    pub fn segment_start(&self, k: usize) -> f64 {
        self.points[k]
    }

    pub fn segment_end(&self, k: usize) -> f64 {
        self.points[k + 1]
    }

    pub fn segment_width(&self, k: usize) -> f64 {
        self.points[k + 1] - self.points[k]
    }

    /// 1 when a customer is scheduled at time 0, else 0.
    pub fn opening_offset(&self) -> usize {
        usize::from(self.customers() > 0 && self.points[1] == 0.0)
    }

    /// Segment containing `t`: the last `k` with `points[k] <= t`, capped at `M`.
    pub fn segment_of(&self, t: f64) -> usize {
        let m = self.customers();
        (0..=m).rev().find(|&k| self.points[k] <= t).unwrap_or(0)
    }
}

impl FromStr for Schedule {
    type Err = Error;

    /// Uses the default horizon of 5; call [`Schedule::parse`] for another horizon.
    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s, 5.0)
    }
}

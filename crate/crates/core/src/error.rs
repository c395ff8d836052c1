use thiserror::Error;

/// Errors raised by the solver, the cost evaluation and the optimizer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("time {t} is outside segment {segment} ([{start}, {end}))")]
    SegmentMismatch {
        segment: usize,
        t: f64,
        start: f64,
        end: f64,
    },

    #[error("queue length {n} outside the valid region of segment {segment} (max {max})")]
    OutsideValidity { segment: usize, n: usize, max: usize },

    #[error("degenerate state: density denominator vanished at t = {t}")]
    DegenerateState { t: f64 },

    #[error("step from {from} by {step} crosses the segment boundary at {boundary}")]
    CrossesBoundary { from: f64, step: f64, boundary: f64 },

    #[error("solver did not converge after {iterations} iterations (F(T) = {cdf_terminal})")]
    NonConvergence { iterations: usize, cdf_terminal: f64 },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("invalid equilibrium input: {0}")]
    InvalidEquilibrium(String),

    #[error("i/o: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

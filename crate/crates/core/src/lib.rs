pub mod distributions;
pub mod dynamics;
pub mod equilibrium;
pub mod error;
pub mod io;
pub mod metrics;
pub mod optimizer;
pub mod params;
pub mod schedule;
pub mod waiting;

pub use error::{Error, Result};

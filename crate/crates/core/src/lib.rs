//! Quickest detection of a disorder in a compound Poisson process whose
//! post-disorder arrival rate is randomly up-shifted by one or two units.
//!
//! The crate filters the two-dimensional sufficient statistic from observed
//! paths, computes the value function of the associated optimal stopping
//! problem by value iteration on a grid, extracts the free boundary, and
//! scores stopping rules by seeded Monte Carlo.

pub mod error;
pub mod filter;
pub mod flow;
pub mod model;
pub mod policy;
pub mod quadrature;
pub mod rng;
pub mod simulate;
pub mod solve;

pub use error::{Error, Result};
pub use flow::Statistic;
pub use model::{MarkModel, ModelParams, RawParams, Regime, RegimeClass};

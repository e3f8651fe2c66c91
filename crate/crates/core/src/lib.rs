//! Lane-drop advance-warning experiments.
//!
//! * [`prob`]: lane-change success probability (Monte Carlo base case, lookup
//!   table, multi-lane recursion).
//! * [`headway`]: log-normal headway fitting, sampling and detector statistics.
//! * [`sim`]: the corridor simulator.
//! * [`advisor`]: per-vehicle change-now advice and the gap safety check.
//! * [`metrics`]: delay statistics, departure density, time-space grids.
//! * [`experiment`]: case matrices, run orchestration and reports.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod advisor;
pub mod experiment;
pub mod headway;
pub mod metrics;
pub mod prob;
pub mod rng;
pub mod scalar;
pub mod sim;

pub use scalar::Scalar;

pub type LookupTable32 = prob::LookupTable<f32>;
pub type LookupTable64 = prob::LookupTable<f64>;
pub type LaneParams32 = prob::LaneParams<f32>;
pub type LaneParams64 = prob::LaneParams<f64>;
pub type CorridorQuery32 = prob::CorridorQuery<f32>;
pub type CorridorQuery64 = prob::CorridorQuery<f64>;

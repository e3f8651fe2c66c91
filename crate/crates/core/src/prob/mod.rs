//! Lane-change success probability.
//!
//! The ego vehicle drives on lane 1 and wants to reach a point a distance `d`
//! ahead on lane `n`, changing one lane at a time. Each target lane carries a
//! stream of vehicles at a common speed with i.i.d. log-normal headways; a
//! lane change starts only into a gap at least the critical gap long and takes
//! a fixed time to complete.
//!
//! The two-lane case has no closed form and is tabulated by Monte Carlo
//! ([`mc_base_case`], [`LookupTable`]); more lanes are composed by a
//! Stieltjes convolution of the two-lane probability with the arrival
//! distribution on the previous lane ([`estimate`]).

mod base;
mod recursion;
mod table;
mod table_io;

pub use base::mc_base_case;
pub use recursion::{estimate, estimate_with_default_grid, DEFAULT_GRID_POINTS, MAX_LANES, MIN_GRID_POINTS};
pub use table::{build_lookup_table, interp_f2, Chart, ChartPoint, GridSpec, LookupTable, TableMeta};
pub use table_io::{FORMAT_VERSION, MAGIC};

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ProbError {
    #[error("{0} is not finite")]
    NonFinite(&'static str),
    #[error("{name} must be {constraint}, got {value}")]
    OutOfRange {
        name: &'static str,
        constraint: &'static str,
        value: f64,
    },
    #[error("corridor query needs at least one target lane")]
    NoTargetLanes,
    #[error("{0} lanes exceeds the supported maximum of {MAX_LANES}")]
    TooManyLanes(usize),
    #[error("lane index {index} out of range for {lanes} target lanes")]
    LaneIndex { index: usize, lanes: usize },
    #[error("grid axis {axis} needs at least 2 nodes, got {nodes}")]
    AxisTooShort { axis: usize, nodes: usize },
    #[error("grid axis {axis} is not strictly increasing")]
    NonMonotoneAxis { axis: usize },
    #[error("table has {got} values, axes require {expected}")]
    ValueCount { expected: usize, got: usize },
    #[error("table value {index} = {value} outside [0, 1]")]
    ValueRange { index: usize, value: f64 },
    #[error("bad table file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn check_finite<T: Scalar>(x: T, name: &'static str) -> Result<(), ProbError> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(ProbError::NonFinite(name))
    }
}

pub(crate) fn out_of_range<T: Scalar>(name: &'static str, constraint: &'static str, value: T) -> ProbError {
    ProbError::OutOfRange {
        name,
        constraint,
        value: value.as_f64(),
    }
}

/// Traffic on one target lane, in any consistent length/time units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneParams<T = f64> {
    /// Common speed of the lane's vehicles.
    pub v: T,
    /// Log-normal location of rear-to-rear headway distances.
    pub mu: T,
    /// Log-normal scale, > 0.
    pub sigma: T,
    /// Critical gap.
    pub g: T,
    /// Lane-change duration.
    pub t: T,
}

impl<T: Scalar> LaneParams<T> {
    pub fn new(v: T, mu: T, sigma: T, g: T, t: T) -> Result<Self, ProbError> {
        let p = Self { v, mu, sigma, g, t };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ProbError> {
        check_finite(self.v, "v")?;
        check_finite(self.mu, "mu")?;
        check_finite(self.sigma, "sigma")?;
        check_finite(self.g, "g")?;
        check_finite(self.t, "t")?;
        if !(self.sigma > T::zero()) {
            return Err(out_of_range("sigma", "> 0", self.sigma));
        }
        if self.g < T::zero() {
            return Err(out_of_range("g", ">= 0", self.g));
        }
        if self.t < T::zero() {
            return Err(out_of_range("t", ">= 0", self.t));
        }
        if self.v < T::zero() {
            return Err(out_of_range("v", ">= 0", self.v));
        }
        Ok(())
    }
}

/// Probability question over `lanes.len() + 1` lanes.
#[derive(Debug, Clone, PartialEq)]
pub struct CorridorQuery<T = f64> {
    /// Distance to the goal.
    pub d: T,
    /// Ego speed on its current lane.
    pub ego_v: T,
    /// Lanes 2..n, in the order they must be entered.
    pub lanes: Vec<LaneParams<T>>,
}

impl<T: Scalar> CorridorQuery<T> {
    pub fn new(d: T, ego_v: T, lanes: Vec<LaneParams<T>>) -> Result<Self, ProbError> {
        let q = Self { d, ego_v, lanes };
        q.validate()?;
        Ok(q)
    }

    /// Total lane count `n`.
    pub fn n(&self) -> usize {
        self.lanes.len() + 1
    }

    pub fn validate(&self) -> Result<(), ProbError> {
        check_finite(self.d, "d")?;
        check_finite(self.ego_v, "ego_v")?;
        if !(self.d > T::zero()) {
            return Err(out_of_range("d", "> 0", self.d));
        }
        if !(self.ego_v > T::zero()) {
            return Err(out_of_range("ego_v", "> 0", self.ego_v));
        }
        if self.lanes.is_empty() {
            return Err(ProbError::NoTargetLanes);
        }
        for l in &self.lanes {
            l.validate()?;
        }
        Ok(())
    }

    /// Speed the ego drives at while searching for a gap into target lane
    /// `lane_index` (0-based into `lanes`).
    pub fn speed_before(&self, lane_index: usize) -> T {
        if lane_index == 0 {
            self.ego_v
        } else {
            self.lanes[lane_index - 1].v
        }
    }
}

/// The two-lane problem rescaled to unit distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedBaseQuery<T = f64> {
    /// `(v_from - v_to) / v_from`: stream distance swept per unit of ego travel,
    /// signed.
    pub dv_rel: T,
    pub mu_n: T,
    pub sigma_n: T,
    pub g_n: T,
    /// Ego travel during the lane change, as a fraction of the distance.
    pub t_n: T,
}

impl<T: Scalar> NormalizedBaseQuery<T> {
    pub fn validate(&self) -> Result<(), ProbError> {
        check_finite(self.dv_rel, "dv_rel")?;
        check_finite(self.mu_n, "mu_n")?;
        check_finite(self.sigma_n, "sigma_n")?;
        check_finite(self.g_n, "g_n")?;
        check_finite(self.t_n, "t_n")?;
        if !(self.sigma_n > T::zero()) {
            return Err(out_of_range("sigma_n", "> 0", self.sigma_n));
        }
        if self.g_n < T::zero() {
            return Err(out_of_range("g_n", ">= 0", self.g_n));
        }
        if self.t_n < T::zero() {
            return Err(out_of_range("t_n", ">= 0", self.t_n));
        }
        Ok(())
    }

    /// Stream length swept before the last feasible initiation.
    pub fn sweep(&self) -> T {
        self.dv_rel.abs() * (T::one() - self.t_n).max(T::zero())
    }
}

/// A probability with its Monte Carlo standard error (0 when interpolated).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbEstimate<T = f64> {
    pub p: T,
    pub stderr: T,
    /// The query fell outside the table hull and was clamped onto it.
    pub clamped: bool,
}

impl<T: Scalar> ProbEstimate<T> {
    pub fn exact(p: T) -> Self {
        Self {
            p: p.clamp_unit(),
            stderr: T::zero(),
            clamped: false,
        }
    }
}

/// Rescales the step into target lane `lane_index` (0-based into
/// `q.lanes`) to unit distance.
pub fn normalize<T: Scalar>(q: &CorridorQuery<T>, lane_index: usize) -> Result<NormalizedBaseQuery<T>, ProbError> {
    check_finite(q.d, "d")?;
    if !(q.d > T::zero()) {
        return Err(out_of_range("d", "> 0", q.d));
    }
    let lane = q.lanes.get(lane_index).ok_or(ProbError::LaneIndex {
        index: lane_index,
        lanes: q.lanes.len(),
    })?;
    let v_from = q.speed_before(lane_index);
    if !(v_from > T::zero()) {
        return Err(out_of_range("ego speed", "> 0", v_from));
    }
    let nq = NormalizedBaseQuery {
        dv_rel: (v_from - lane.v) / v_from,
        mu_n: lane.mu - q.d.ln(),
        sigma_n: lane.sigma,
        g_n: lane.g / q.d,
        t_n: v_from * lane.t / q.d,
    };
    nq.validate()?;
    Ok(nq)
}

/// Target-lane speed used by the estimator: speeds within `v_l` of the ego's
/// are replaced by `v_own + v_l`, avoiding the frozen-sweep singularity.
#[inline]
pub fn adjust_speeds<T: Scalar>(v_own: T, v_adj: T, v_l: T) -> T {
    if (v_adj - v_own).abs() < v_l {
        v_own + v_l
    } else {
        v_adj
    }
}

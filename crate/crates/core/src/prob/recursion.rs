use crate::scalar::Scalar;

use super::{interp_f2, normalize, CorridorQuery, LaneParams, LookupTable, ProbError, ProbEstimate};

/// Largest lane count accepted by [`estimate`].
pub const MAX_LANES: usize = 8;
pub const MIN_GRID_POINTS: usize = 16;
pub const DEFAULT_GRID_POINTS: usize = 256;

/// Two-lane probability of completing the change into `lane` within `dist`,
/// starting at speed `v_from`, evaluated directly in chart coordinates so that
/// `dist = 0` is allowed.
fn f2_raw<T: Scalar>(table: &LookupTable<T>, v_from: T, lane: &LaneParams<T>, dist: T) -> ProbEstimate<T> {
    let dist = dist.max(T::zero());
    if v_from * lane.t > dist {
        return ProbEstimate::exact(T::zero());
    }
    if lane.g <= T::zero() {
        return ProbEstimate::exact(T::one());
    }
    let sweep = if v_from > T::zero() {
        (v_from - lane.v).abs() * (dist / v_from - lane.t).max(T::zero()) / lane.mu.exp()
    } else {
        T::infinity()
    };
    let gap_z = (lane.g.ln() - lane.mu) / lane.sigma;
    table.interpolate(&[sweep, gap_z, lane.sigma])
}

/// Probability of reaching lane `n` within distance `d`.
///
/// Two lanes are answered by [`interp_f2`]. For more lanes the arrival
/// distribution `F_m(x)` on each intermediate lane is built on a uniform
/// `grid_points` grid over `[0, d]` and convolved with the next two-lane
/// probability:
///
/// `F_{m+1}(x_j) = F_m(0) f(x_j) + sum_{k=1..j} f(x_j - (x_k + x_{k-1})/2) (F_m(x_k) - F_m(x_{k-1}))`
///
/// The explicit `F_m(0)` term keeps the mass of an immediate lane change,
/// which a density-based rule would drop.
pub fn estimate<T: Scalar>(
    q: &CorridorQuery<T>,
    table: &LookupTable<T>,
    grid_points: usize,
) -> Result<ProbEstimate<T>, ProbError> {
    q.validate()?;
    let n = q.n();
    if n > MAX_LANES {
        return Err(ProbError::TooManyLanes(n));
    }
    if grid_points < MIN_GRID_POINTS {
        return Err(ProbError::OutOfRange {
            name: "grid_points",
            constraint: ">= 16",
            value: grid_points as f64,
        });
    }
    if n == 2 {
        return Ok(interp_f2(table, &normalize(q, 0)?));
    }

    let k = grid_points;
    let h = q.d / T::of_usize(k - 1);
    let x = |j: usize| if j == k - 1 { q.d } else { h * T::of_usize(j) };
    let mut clamped = false;

    let mut cdf: Vec<T> = (0..k)
        .map(|j| {
            let e = f2_raw(table, q.ego_v, &q.lanes[0], x(j));
            clamped |= e.clamped;
            e.p
        })
        .collect();

    for stage in 1..q.lanes.len() {
        let lane = &q.lanes[stage];
        let v_from = q.lanes[stage - 1].v;
        let mut eval = |dist: T| {
            let e = f2_raw(table, v_from, lane, dist);
            clamped |= e.clamped;
            e.p
        };
        let at_node: Vec<T> = (0..k).map(|j| eval(x(j))).collect();
        let at_mid: Vec<T> = (0..k - 1).map(|i| eval(h * (T::of_usize(i) + T::of(0.5)))).collect();
        let increments: Vec<T> = (0..k)
            .map(|j| if j == 0 { T::zero() } else { cdf[j] - cdf[j - 1] })
            .collect();

        let next: Vec<T> = (0..k)
            .map(|j| {
                let atom = cdf[0] * at_node[j];
                let spread: T = (1..=j).map(|m| at_mid[j - m] * increments[m]).sum();
                atom + spread
            })
            .collect();
        cdf = next;
    }

    Ok(ProbEstimate {
        p: cdf[k - 1].clamp_unit(),
        stderr: T::zero(),
        clamped,
    })
}

pub fn estimate_with_default_grid<T: Scalar>(
    q: &CorridorQuery<T>,
    table: &LookupTable<T>,
) -> Result<ProbEstimate<T>, ProbError> {
    estimate(q, table, DEFAULT_GRID_POINTS)
}

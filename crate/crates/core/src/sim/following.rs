//! Car following: the improved intelligent driver model, parameterized by
//! the standstill distance (cc0) and time headway (cc1) of the behavior type,
//! with cc2 acting as a drift band in which a follower stops closing in.

use super::config::{BehaviorParams, VehicleParams};
use super::vehicle::Vehicle;

/// What a follower reacts to: gap from its front bumper to the leader's rear
/// bumper, and the leader's speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle {
    pub gap: f64,
    pub speed: f64,
}

const DELTA: i32 = 4;

/// Improved IDM acceleration. `a` is the maximum acceleration, `b` the
/// comfortable deceleration (positive).
#[allow(clippy::too_many_arguments)]
pub fn iidm(v: f64, v0: f64, a: f64, b: f64, s0: f64, t_h: f64, lead: Option<Obstacle>) -> f64 {
    let v0 = v0.max(1e-3);
    let a_free = if v <= v0 {
        a * (1.0 - (v / v0).powi(DELTA))
    } else {
        -b * (1.0 - (v0 / v).powf(a * DELTA as f64 / b))
    };
    let Some(lead) = lead else {
        return a_free;
    };
    if lead.gap <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let dv = v - lead.speed;
    let s_star = s0 + (v * t_h + v * dv / (2.0 * (a * b).sqrt())).max(0.0);
    let z = s_star / lead.gap;
    if v <= v0 {
        if z >= 1.0 {
            a * (1.0 - z * z)
        } else if a_free > 0.0 {
            a_free * (1.0 - z.powf(2.0 * a / a_free))
        } else {
            0.0
        }
    } else if z >= 1.0 {
        a_free + a * (1.0 - z * z)
    } else {
        a_free
    }
}

/// Acceleration of `follower` behind `leader` (or the free road), bounded by
/// `[max_decel_own, a_max]`.
pub fn car_following_accel(
    follower: &Vehicle,
    leader: Option<&Vehicle>,
    params: &BehaviorParams,
    vp: &VehicleParams,
) -> f64 {
    let lead = leader.map(|l| Obstacle {
        gap: l.rear() - follower.x,
        speed: l.speed,
    });
    accel_towards(follower.speed, follower.desired_speed, follower.a_max, lead, params, vp)
}

/// [`car_following_accel`] against an arbitrary obstacle.
pub fn accel_towards(
    v: f64,
    v0: f64,
    a_max: f64,
    lead: Option<Obstacle>,
    params: &BehaviorParams,
    vp: &VehicleParams,
) -> f64 {
    let mut acc = iidm(v, v0, a_max, vp.comfort_decel, params.cc0, params.cc1, lead);
    if let Some(l) = lead {
        let s_eq = params.cc0 + params.cc1 * v;
        if acc > 0.0 && v > 0.0 && v >= l.speed && l.gap >= s_eq && l.gap <= s_eq + params.cc2 {
            acc = 0.0;
        }
    }
    acc.clamp(params.max_decel_own, a_max)
}

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleClass {
    Car,
    SmartCar,
    Hgv,
}

impl VehicleClass {
    pub fn as_str(self) -> &'static str {
        match self {
            VehicleClass::Car => "car",
            VehicleClass::SmartCar => "smart_car",
            VehicleClass::Hgv => "hgv",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Urgency {
    Discretionary,
    Mandatory,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LcState {
    None,
    /// Changing toward `target_lane`; the vehicle occupies both lanes until
    /// `t_remaining` runs out.
    InProgress {
        target_lane: u8,
        t_remaining: f64,
    },
}

/// A merge the vehicle wants but has not started yet. Neighbours in the
/// target lane may brake for it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeRequest {
    pub target_lane: u8,
    pub urgency: Urgency,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub id: u64,
    pub class: VehicleClass,
    pub lane: u8,
    /// Front bumper, ft from the corridor start.
    pub x: f64,
    /// ft/s.
    pub speed: f64,
    pub accel: f64,
    pub desired_speed: f64,
    pub length: f64,
    /// Maximum acceleration, ft/s².
    pub a_max: f64,
    pub lc: LcState,
    pub entry_time: f64,
    pub(crate) request: Option<MergeRequest>,
    pub(crate) cooldown_until: f64,
    /// Noise of the current advised lane-change attempt.
    pub(crate) attempt_eps: Option<(f64, f64)>,
    pub(crate) stopped: bool,
}

impl Vehicle {
    pub fn rear(&self) -> f64 {
        self.x - self.length
    }

    pub fn target_lane(&self) -> Option<u8> {
        match self.lc {
            LcState::InProgress { target_lane, .. } => Some(target_lane),
            LcState::None => None,
        }
    }

    pub fn occupies(&self, lane: u8) -> bool {
        self.lane == lane || self.target_lane() == Some(lane)
    }

    pub fn is_changing(&self) -> bool {
        matches!(self.lc, LcState::InProgress { .. })
    }
}

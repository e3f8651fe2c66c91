use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FT_PER_M: f64 = 1.0 / 0.3048;
pub const M_PER_FT: f64 = 0.3048;
pub const FTPS_PER_MPH: f64 = 5280.0 / 3600.0;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    /// Free lane selection.
    Freeway,
    /// Links upstream of a lane drop.
    WeaveMerge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub index: u8,
    pub length_ft: f64,
    pub lanes: u8,
    pub behavior: Behavior,
    /// Distance before this link's downstream connector at which vehicles in
    /// a lane that ends there start to merge.
    #[serde(default = "default_lane_change_distance")]
    pub lane_change_distance_ft: f64,
}

fn default_lane_change_distance() -> f64 {
    656.2
}

/// Car-following and lane-change parameters of one behavior type.
/// Decelerations are negative, in ft/s².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BehaviorParams {
    /// Standstill distance, ft.
    pub cc0: f64,
    /// Desired time headway, s.
    pub cc1: f64,
    /// Following variation band, ft.
    pub cc2: f64,
    pub max_decel_own: f64,
    pub max_decel_trail: f64,
    pub acc_decel_own: f64,
    pub acc_decel_trail: f64,
    /// Fraction of the safety distance required while changing lanes.
    pub safety_reduction: f64,
    pub coop_brake_decel: f64,
    /// Vehicles that must merge match the target lane's speed while they wait
    /// for a gap.
    pub advanced_merging: bool,
    /// Vehicles move out of the way of merging vehicles when they can.
    pub cooperative_lc: bool,
}

impl BehaviorParams {
    pub fn freeway() -> Self {
        Self {
            cc0: 4.92,
            cc1: 0.9,
            cc2: 13.12,
            max_decel_own: -13.12,
            max_decel_trail: -9.84,
            acc_decel_own: -3.28,
            acc_decel_trail: -1.64,
            safety_reduction: 0.60,
            coop_brake_decel: -9.84,
            advanced_merging: true,
            cooperative_lc: false,
        }
    }

    pub fn weave_merge() -> Self {
        Self {
            cc0: 4.92,
            cc1: 0.9,
            cc2: 13.12,
            max_decel_own: -15.0,
            max_decel_trail: -12.0,
            acc_decel_own: -4.0,
            acc_decel_trail: -3.28,
            safety_reduction: 0.25,
            coop_brake_decel: -23.0,
            advanced_merging: true,
            cooperative_lc: true,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [
            ("max_decel_own", self.max_decel_own),
            ("max_decel_trail", self.max_decel_trail),
            ("acc_decel_own", self.acc_decel_own),
            ("acc_decel_trail", self.acc_decel_trail),
            ("coop_brake_decel", self.coop_brake_decel),
        ] {
            if !(v < 0.0) {
                return Err(invalid(name, format!("must be negative, got {v}")));
            }
        }
        if !(self.safety_reduction > 0.0 && self.safety_reduction <= 1.0) {
            return Err(invalid("safety_reduction", "must lie in (0, 1]"));
        }
        if !(self.cc0 >= 0.0 && self.cc1 >= 0.0 && self.cc2 >= 0.0) {
            return Err(invalid("cc0/cc1/cc2", "must be non-negative"));
        }
        Ok(())
    }

    /// Accepted decelerations `(own, trailing)` for a lane change. Mandatory
    /// changes relax linearly from the accepted toward the maximum values as
    /// `urgency` goes from 0 to 1.
    pub fn lane_change_bounds(&self, urgency: f64) -> (f64, f64) {
        let u = urgency.clamp(0.0, 1.0);
        (
            self.acc_decel_own + u * (self.max_decel_own - self.acc_decel_own),
            self.acc_decel_trail + u * (self.max_decel_trail - self.acc_decel_trail),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub car_length_ft: f64,
    pub hgv_length_ft: f64,
    pub car_accel: f64,
    pub hgv_accel: f64,
    /// Comfortable deceleration of the following model (positive), ft/s².
    pub comfort_decel: f64,
    pub desired_speed_mph: (f64, f64),
    /// Time from initiation to completion of a lane change, s.
    pub lane_change_s: f64,
    /// Acceleration advantage needed for a discretionary change, ft/s².
    pub lc_incentive: f64,
    /// Extra advantage needed to move left rather than right, ft/s².
    pub keep_right_bias: f64,
    /// Pause after a completed lane change before another discretionary one, s.
    pub lc_cooldown_s: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            car_length_ft: 15.0,
            hgv_length_ft: 45.0,
            car_accel: 8.0,
            hgv_accel: 3.5,
            comfort_decel: 6.56,
            desired_speed_mph: (67.0, 80.0),
            lane_change_s: 3.0,
            lc_incentive: 1.0,
            keep_right_bias: 0.3,
            lc_cooldown_s: 5.0,
        }
    }
}

/// Everything that defines one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub step_s: f64,
    pub total_s: f64,
    pub seeding_end_s: f64,
    pub peak: (f64, f64),
    pub q_offpeak: f64,
    pub q_peak: f64,
    /// Smart-car share of all vehicles.
    pub r: f64,
    pub hgv_peak: f64,
    pub hgv_offpeak: f64,
    /// Advisor threshold; `None` runs the baseline.
    pub p_l: Option<f64>,
    pub links: Vec<LinkSpec>,
    pub freeway: BehaviorParams,
    pub weave_merge: BehaviorParams,
    pub vehicles: VehicleParams,
    pub travel_start_ft: f64,
    pub travel_end_ft: f64,
    /// A run with no movement for this long is declared gridlocked.
    pub gridlock_s: f64,
    /// Time-space accumulator cell, `(ft, s)`.
    pub timespace_cell: (f64, f64),
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            step_s: 0.1,
            total_s: 9000.0,
            seeding_end_s: 1800.0,
            peak: (3600.0, 7200.0),
            q_offpeak: 2400.0,
            q_peak: 4600.0,
            r: 0.40,
            hgv_peak: 0.15,
            hgv_offpeak: 0.20,
            p_l: None,
            links: i81_links(),
            freeway: BehaviorParams::freeway(),
            weave_merge: BehaviorParams::weave_merge(),
            vehicles: VehicleParams::default(),
            travel_start_ft: 0.0,
            travel_end_ft: 12178.38,
            gridlock_s: 300.0,
            timespace_cell: (100.0, 100.0),
        }
    }
}

/// The five-link southbound segment with lane drops after links 2 and 4.
pub fn i81_links() -> Vec<LinkSpec> {
    use Behavior::*;
    let spec = |index, length_ft, lanes, behavior, lcd| LinkSpec {
        index,
        length_ft,
        lanes,
        behavior,
        lane_change_distance_ft: lcd,
    };
    vec![
        spec(1, 3275.312, 4, Freeway, 656.2),
        spec(2, 2998.360, 4, WeaveMerge, 2880.0),
        spec(3, 2490.507, 3, Freeway, 656.2),
        spec(4, 1798.360, 3, WeaveMerge, 1740.0),
        spec(5, 1632.506, 2, Freeway, 656.2),
    ]
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.step_s > 0.0 && self.step_s <= 1.0) {
            return Err(invalid("step_s", "must lie in (0, 1]"));
        }
        if !(self.total_s > 0.0) {
            return Err(invalid("total_s", "must be positive"));
        }
        if !(self.seeding_end_s >= 0.0 && self.seeding_end_s <= self.peak.0) {
            return Err(invalid("seeding_end_s", "must precede the peak"));
        }
        if !(self.peak.0 < self.peak.1 && self.peak.1 <= self.total_s) {
            return Err(invalid("peak", "must be an interval inside the run"));
        }
        if !(self.q_offpeak >= 0.0 && self.q_peak >= 0.0) {
            return Err(invalid("q", "flows must be non-negative"));
        }
        for (name, share) in [
            ("r", self.r),
            ("hgv_peak", self.hgv_peak),
            ("hgv_offpeak", self.hgv_offpeak),
        ] {
            if !(0.0..=1.0).contains(&share) {
                return Err(invalid(name, "share must lie in [0, 1]"));
            }
        }
        if self.r + self.hgv_peak > 1.0 + 1e-12 || self.r + self.hgv_offpeak > 1.0 + 1e-12 {
            return Err(invalid("r", "smart and HGV shares exceed 1"));
        }
        if let Some(p) = self.p_l {
            if !(p > 0.0 && p < 1.0) {
                return Err(invalid("p_l", "must lie in (0, 1)"));
            }
        }
        if self.links.is_empty() {
            return Err(invalid("links", "at least one link required"));
        }
        for (k, l) in self.links.iter().enumerate() {
            if l.index as usize != k + 1 {
                return Err(invalid("links", "indices must be 1, 2, ... in order"));
            }
            if !(l.length_ft > 0.0) || l.lanes == 0 || l.lanes as usize > super::MAX_LANES {
                return Err(invalid("links", format!("bad geometry on link {}", l.index)));
            }
            if !(l.lane_change_distance_ft > 0.0) {
                return Err(invalid("links", "lane change distance must be positive"));
            }
        }
        if self.links.windows(2).any(|w| w[1].lanes > w[0].lanes) {
            return Err(invalid("links", "lane counts may only decrease downstream"));
        }
        self.freeway.validate()?;
        self.weave_merge.validate()?;
        let vp = &self.vehicles;
        if !(vp.car_length_ft > 0.0 && vp.hgv_length_ft > 0.0 && vp.car_accel > 0.0 && vp.hgv_accel > 0.0) {
            return Err(invalid("vehicles", "lengths and accelerations must be positive"));
        }
        if !(vp.comfort_decel > 0.0) {
            return Err(invalid("vehicles.comfort_decel", "must be positive"));
        }
        if !(vp.desired_speed_mph.0 > 0.0 && vp.desired_speed_mph.0 <= vp.desired_speed_mph.1) {
            return Err(invalid("vehicles.desired_speed_mph", "must be a positive range"));
        }
        if !(vp.lane_change_s >= 0.0) {
            return Err(invalid("vehicles.lane_change_s", "must be non-negative"));
        }
        let length: f64 = self.links.iter().map(|l| l.length_ft).sum();
        if !(self.travel_start_ft >= 0.0 && self.travel_start_ft < self.travel_end_ft && self.travel_end_ft <= length) {
            return Err(invalid("travel_end_ft", "measurement must lie inside the corridor"));
        }
        if !(self.gridlock_s > 0.0) {
            return Err(invalid("gridlock_s", "must be positive"));
        }
        if !(self.timespace_cell.0 > 0.0 && self.timespace_cell.1 > 0.0) {
            return Err(invalid("timespace_cell", "must be positive"));
        }
        Ok(())
    }

    pub fn in_peak(&self, t: f64) -> bool {
        t >= self.peak.0 && t < self.peak.1
    }

    /// Input flow at time `t`, veh/h.
    pub fn flow_at(&self, t: f64) -> f64 {
        if self.in_peak(t) {
            self.q_peak
        } else {
            self.q_offpeak
        }
    }

    /// `(car, smart, hgv)` shares at time `t`.
    pub fn composition_at(&self, t: f64) -> (f64, f64, f64) {
        let hgv = if self.in_peak(t) {
            self.hgv_peak
        } else {
            self.hgv_offpeak
        };
        ((1.0 - hgv - self.r).max(0.0), self.r, hgv)
    }

    pub fn behavior(&self, b: Behavior) -> &BehaviorParams {
        match b {
            Behavior::Freeway => &self.freeway,
            Behavior::WeaveMerge => &self.weave_merge,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let cfg: SimConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("SimConfig serializes")
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Static geometry derived from the link list.
#[derive(Debug, Clone, PartialEq)]
pub struct Corridor {
    pub links: Vec<LinkSpec>,
    starts: Vec<f64>,
    pub length: f64,
    /// `lane_end[lane]` for lane in `1..=max_lanes`; index 0 unused.
    lane_end: Vec<f64>,
    /// Lane change distance of the connector where each lane ends.
    lane_lcd: Vec<f64>,
}

impl Corridor {
    pub fn new(links: &[LinkSpec]) -> Self {
        let mut starts = Vec::with_capacity(links.len());
        let mut acc = 0.0;
        for l in links {
            starts.push(acc);
            acc += l.length_ft;
        }
        let max_lanes = links.iter().map(|l| l.lanes).max().unwrap_or(0) as usize;
        let mut lane_end = vec![0.0; max_lanes + 1];
        let mut lane_lcd = vec![f64::INFINITY; max_lanes + 1];
        for lane in 1..=max_lanes {
            let last = links
                .iter()
                .rposition(|l| l.lanes as usize >= lane)
                .expect("lane exists on link 1");
            lane_end[lane] = starts[last] + links[last].length_ft;
            if last + 1 < links.len() {
                lane_lcd[lane] = links[last].lane_change_distance_ft;
            }
        }
        Self {
            links: links.to_vec(),
            starts,
            length: acc,
            lane_end,
            lane_lcd,
        }
    }

    pub fn max_lanes(&self) -> u8 {
        (self.lane_end.len() - 1) as u8
    }

    pub fn link_start(&self, link: u8) -> f64 {
        self.starts[link as usize - 1]
    }

    pub fn link_midpoint(&self, link: u8) -> f64 {
        self.link_start(link) + 0.5 * self.links[link as usize - 1].length_ft
    }

    /// 1-based link containing corridor position `x` (clamped to the ends).
    pub fn link_at(&self, x: f64) -> u8 {
        let k = self.starts.partition_point(|&s| s <= x).max(1);
        k as u8
    }

    pub fn behavior_at(&self, x: f64) -> Behavior {
        self.links[self.link_at(x) as usize - 1].behavior
    }

    /// Position where `lane` ends; the corridor length for through lanes.
    pub fn lane_end(&self, lane: u8) -> f64 {
        self.lane_end[lane as usize]
    }

    pub fn lane_terminates(&self, lane: u8) -> bool {
        self.lane_end(lane) < self.length
    }

    /// Lane change distance of the connector ending `lane` (infinite for
    /// through lanes).
    pub fn lane_change_distance(&self, lane: u8) -> f64 {
        self.lane_lcd[lane as usize]
    }

    pub fn lane_exists(&self, lane: u8, x: f64) -> bool {
        lane >= 1 && (lane as usize) < self.lane_end.len() && x < self.lane_end(lane)
    }

    /// Link-relative position of corridor position `x`.
    pub fn link_position(&self, x: f64) -> (u8, f64) {
        let link = self.link_at(x);
        (link, x - self.link_start(link))
    }
}

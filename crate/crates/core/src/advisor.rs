//! Onboard advance warning: estimate the chance of leaving a terminating lane
//! in time and advise a change when it falls below the threshold `p_l`; gate
//! advised changes with a lead/lag critical-gap check.

use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::headway::StatsTable;
use crate::prob::{adjust_speeds, estimate_with_default_grid, CorridorQuery, LaneParams, LookupTable, ProbError};
use crate::sim::config::{Corridor, M_PER_FT};
use crate::sim::vehicle::{Vehicle, VehicleClass};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvisorConfig {
    pub p_l: f64,
    /// Critical gap time coefficient, s.
    pub delta_gap: f64,
    /// Critical gap offset, m.
    pub s0: f64,
    /// Lane-change duration, s.
    pub t_lc: f64,
    /// Speed separation enforced between adjacent lanes, m/s.
    pub v_l: f64,
    /// Evaluate every this many steps.
    pub eval_every: u32,
    /// Mean vehicle length of the target stream, m. Headways are measured
    /// front to front, so a usable headway must hold a leader as well as the
    /// critical gap.
    pub stream_vehicle_length: f64,
    /// Ego speeds below this are raised to it, m/s.
    pub min_speed: f64,
    /// Memo quantization of the distance to the lane end, ft.
    pub d_quantum_ft: f64,
    /// Memo quantization of the ego speed, ft/s.
    pub v_quantum_ftps: f64,
}

impl AdvisorConfig {
    pub fn new(p_l: f64) -> Self {
        Self {
            p_l,
            delta_gap: 1.6,
            s0: 1.0,
            t_lc: 3.0,
            v_l: 4.0,
            eval_every: 1,
            stream_vehicle_length: 19.5 * M_PER_FT,
            min_speed: 0.5,
            d_quantum_ft: 10.0,
            v_quantum_ftps: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), AdvisorError> {
        if !(self.p_l > 0.0 && self.p_l < 1.0) {
            return Err(AdvisorError::Threshold(self.p_l));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum AdvisorError {
    #[error("threshold p_l must lie in (0, 1), got {0}")]
    Threshold(f64),
    #[error("lane {0} does not terminate")]
    ThroughLane(u8),
    #[error("advisor is inactive for a {class:?} on lane {lane}")]
    Inactive { class: VehicleClass, lane: u8 },
    #[error("no traffic statistics for link {link} lane {lane} at or before t = {t}")]
    MissingStats { link: u8, lane: u8, t: f64 },
    #[error(transparent)]
    Prob(#[from] ProbError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Advice {
    Keep,
    ChangeNow { target_lane: u8 },
}

/// The state the advisor sees for one vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdviceInput {
    pub t: f64,
    pub class: VehicleClass,
    pub lane: u8,
    pub link: u8,
    /// Distance to the end of the vehicle's lane, ft.
    pub d_ft: f64,
    pub speed_ftps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdviceOutcome {
    pub advice: Advice,
    pub p: f64,
    /// Statistics came from an earlier interval.
    pub inherited: bool,
}

/// Only smart cars outside the two rightmost lanes are advised.
pub fn is_advised(class: VehicleClass, lane: u8) -> bool {
    class == VehicleClass::SmartCar && lane > 2
}

/// Arc distance from the front bumper to the end of the vehicle's lane.
pub fn distance_to_lane_end(vehicle: &Vehicle, corridor: &Corridor) -> Result<f64, AdvisorError> {
    if !corridor.lane_terminates(vehicle.lane) {
        return Err(AdvisorError::ThroughLane(vehicle.lane));
    }
    Ok((corridor.lane_end(vehicle.lane) - vehicle.x).max(0.0))
}

/// Builds the two-lane question for a vehicle `d_m` ahead of its lane end at
/// `speed_mps`, against the adjacent lane's statistics.
pub fn build_query(
    d_m: f64,
    speed_mps: f64,
    v_target: f64,
    mu: f64,
    sigma: f64,
    cfg: &AdvisorConfig,
) -> Result<CorridorQuery, ProbError> {
    let v1 = speed_mps.max(cfg.min_speed);
    let v2 = adjust_speeds(v1, v_target, cfg.v_l);
    let g = cfg.delta_gap * v_target + cfg.s0 + cfg.stream_vehicle_length;
    CorridorQuery::new(d_m, v1, vec![LaneParams::new(v2, mu, sigma, g, cfg.t_lc)?])
}

fn quantize(x: f64, q: f64) -> i64 {
    (x / q).floor() as i64
}

/// Advice for one vehicle; returns `ChangeNow` iff the estimate is below
/// `p_l`. Distance and speed are quantized to the memo grid before the
/// estimate, so memoized and fresh answers agree.
pub fn advise(
    input: &AdviceInput,
    stats: &StatsTable,
    table: &LookupTable,
    cfg: &AdvisorConfig,
) -> Result<AdviceOutcome, AdvisorError> {
    let (p, inherited) = estimate_for(input, stats, table, cfg)?;
    Ok(decide(input.lane, p, inherited, cfg.p_l))
}

fn decide(lane: u8, p: f64, inherited: bool, p_l: f64) -> AdviceOutcome {
    let advice = if p < p_l {
        Advice::ChangeNow { target_lane: lane - 1 }
    } else {
        Advice::Keep
    };
    AdviceOutcome { advice, p, inherited }
}

fn estimate_for(
    input: &AdviceInput,
    stats: &StatsTable,
    table: &LookupTable,
    cfg: &AdvisorConfig,
) -> Result<(f64, bool), AdvisorError> {
    if !is_advised(input.class, input.lane) {
        return Err(AdvisorError::Inactive {
            class: input.class,
            lane: input.lane,
        });
    }
    let target = input.lane - 1;
    let found = stats
        .get(input.link, target, input.t)
        .ok_or(AdvisorError::MissingStats {
            link: input.link,
            lane: target,
            t: input.t,
        })?;
    let d_ft = quantize(input.d_ft, cfg.d_quantum_ft) as f64 * cfg.d_quantum_ft;
    if d_ft <= 0.0 {
        return Ok((0.0, found.inherited));
    }
    let v_ftps = quantize(input.speed_ftps + 0.5 * cfg.v_quantum_ftps, cfg.v_quantum_ftps) as f64 * cfg.v_quantum_ftps;
    let s = found.stats;
    let q = build_query(d_ft * M_PER_FT, v_ftps * M_PER_FT, s.v_mean, s.mu, s.sigma, cfg)?;
    Ok((estimate_with_default_grid(&q, table)?.p, found.inherited))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct MemoKey {
    interval: u32,
    link: u8,
    lane: u8,
    d: i64,
    v: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdvisorTraceRow {
    pub t_s: f64,
    pub vehicle_id: u64,
    pub lane: u8,
    pub d_ft: f64,
    pub p_estimate: f64,
    pub p_l: f64,
    pub decision: &'static str,
    pub safety_pass: bool,
}

/// Per-run advisor with a memo over quantized states.
#[derive(Debug, Clone)]
pub struct Advisor {
    pub cfg: AdvisorConfig,
    table: Arc<LookupTable>,
    stats: Arc<StatsTable>,
    memo: HashMap<MemoKey, (f64, bool)>,
    pub trace: Vec<AdvisorTraceRow>,
}

impl Advisor {
    pub fn new(cfg: AdvisorConfig, table: Arc<LookupTable>, stats: Arc<StatsTable>) -> Result<Self, AdvisorError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            table,
            stats,
            memo: HashMap::new(),
            trace: Vec::new(),
        })
    }

    pub fn advise(&mut self, input: &AdviceInput) -> Result<AdviceOutcome, AdvisorError> {
        let key = MemoKey {
            interval: crate::headway::interval_of(input.t),
            link: input.link,
            lane: input.lane,
            d: quantize(input.d_ft, self.cfg.d_quantum_ft),
            v: quantize(
                input.speed_ftps + 0.5 * self.cfg.v_quantum_ftps,
                self.cfg.v_quantum_ftps,
            ),
        };
        let (p, inherited) = match self.memo.get(&key) {
            Some(hit) => *hit,
            None => {
                let r = estimate_for(input, &self.stats, &self.table, &self.cfg)?;
                self.memo.insert(key, r);
                r
            }
        };
        Ok(decide(input.lane, p, inherited, self.cfg.p_l))
    }

    pub fn memo_len(&self) -> usize {
        self.memo.len()
    }
}

/// Writes `t_s,vehicle_id,lane,d_ft,p_estimate,p_l,decision,safety_pass`.
pub fn write_trace_csv<W: Write>(rows: &[AdvisorTraceRow], w: W) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub const LEAD_CONST: f64 = 1.353;
pub const LEAD_POS: f64 = -2.700;
pub const LEAD_NEG: f64 = -0.231;
pub const LAG_CONST: f64 = 1.429;
pub const LAG_POS: f64 = 0.471;
pub const EPS_LEAD_SD: f64 = 1.112;
pub const EPS_LAG_SD: f64 = 0.742;

/// Critical gaps and the noise that produced them, m.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyGaps {
    pub g_lead_cr: f64,
    pub g_lag_cr: f64,
    pub eps_lead: f64,
    pub eps_lag: f64,
}

/// An adjacent-lane vehicle as seen from the ego: clear gap (m) and speed
/// relative to the ego, `neighbour - ego` (m/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub gap: f64,
    pub dv: f64,
}

pub fn critical_gaps(dv_lead: f64, dv_lag: f64, eps_lead: f64, eps_lag: f64) -> SafetyGaps {
    let lead = LEAD_CONST + LEAD_POS * dv_lead.max(0.0) + LEAD_NEG * dv_lead.min(0.0) + eps_lead;
    let lag = LAG_CONST + LAG_POS * dv_lag.max(0.0) + eps_lag;
    SafetyGaps {
        g_lead_cr: lead.exp(),
        g_lag_cr: lag.exp(),
        eps_lead,
        eps_lag,
    }
}

/// One draw of the lead and lag noise terms.
pub fn draw_eps<R: Rng + ?Sized>(rng: &mut R) -> (f64, f64) {
    let lead = Normal::new(0.0, EPS_LEAD_SD).expect("valid sd").sample(rng);
    let lag = Normal::new(0.0, EPS_LAG_SD).expect("valid sd").sample(rng);
    (lead, lag)
}

/// Passes iff both actual gaps reach their critical values; a missing
/// neighbour never blocks.
pub fn safety_check_with(lead: Option<Neighbor>, lag: Option<Neighbor>, eps: (f64, f64)) -> (bool, SafetyGaps) {
    let gaps = critical_gaps(lead.map_or(0.0, |n| n.dv), lag.map_or(0.0, |n| n.dv), eps.0, eps.1);
    let lead_ok = lead.is_none_or(|n| n.gap >= gaps.g_lead_cr);
    let lag_ok = lag.is_none_or(|n| n.gap >= gaps.g_lag_cr);
    (lead_ok && lag_ok, gaps)
}

pub fn safety_check<R: Rng + ?Sized>(lead: Option<Neighbor>, lag: Option<Neighbor>, rng: &mut R) -> (bool, SafetyGaps) {
    safety_check_with(lead, lag, draw_eps(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::headway::IntervalTrafficStats;
    use crate::prob::{GridSpec, TableMeta};
    use crate::rng::seeded;
    use crate::sim::config::i81_links;
    use crate::sim::vehicle::LcState;

    #[test]
    fn closed_form_critical_gaps() {
        let g = critical_gaps(0.0, 0.0, 0.0, 0.0);
        assert!((g.g_lead_cr - 1.353f64.exp()).abs() < 1e-12);
        assert!((g.g_lag_cr - 1.429f64.exp()).abs() < 1e-12);
        assert!((g.g_lead_cr - 3.8690).abs() < 1e-4);
        assert!((g.g_lag_cr - 4.1746).abs() < 1e-4);
    }

    #[test]
    fn faster_leader_shrinks_lead_gap() {
        let g = critical_gaps(2.0, 0.0, 0.0, 0.0);
        assert!((g.g_lead_cr - (1.353f64 - 5.4).exp()).abs() < 1e-12);
        assert!((g.g_lead_cr - 0.0175).abs() < 1e-4);
        let slower = critical_gaps(-2.0, 0.0, 0.0, 0.0);
        assert!((slower.g_lead_cr - (1.353f64 + 0.462).exp()).abs() < 1e-12);
        let fast_lag = critical_gaps(0.0, 3.0, 0.0, 0.0);
        assert!((fast_lag.g_lag_cr - (1.429f64 + 1.413).exp()).abs() < 1e-12);
        assert_eq!(critical_gaps(0.0, -3.0, 0.0, 0.0).g_lag_cr, 1.429f64.exp());
    }

    #[test]
    fn missing_neighbours_never_block() {
        let mut rng = seeded(4);
        for _ in 0..100 {
            assert!(safety_check(None, None, &mut rng).0);
        }
        let lead = Some(Neighbor { gap: 1000.0, dv: 0.0 });
        assert!(safety_check_with(lead, None, (0.0, f64::INFINITY)).0);
    }

    #[test]
    fn infinite_noise_never_passes() {
        let n = Some(Neighbor { gap: 1e9, dv: 0.0 });
        assert!(!safety_check_with(n, n, (f64::INFINITY, 0.0)).0);
        assert!(!safety_check_with(n, n, (0.0, f64::INFINITY)).0);
    }

    #[test]
    fn gap_boundaries() {
        let g = critical_gaps(0.0, 0.0, 0.0, 0.0);
        let at = |lead: f64, lag: f64| {
            safety_check_with(
                Some(Neighbor { gap: lead, dv: 0.0 }),
                Some(Neighbor { gap: lag, dv: 0.0 }),
                (0.0, 0.0),
            )
            .0
        };
        assert!(at(g.g_lead_cr, g.g_lag_cr));
        assert!(!at(g.g_lead_cr - 1e-9, g.g_lag_cr));
        assert!(!at(g.g_lead_cr, g.g_lag_cr - 1e-9));
    }

    #[test]
    fn eps_draw_moments() {
        let mut rng = seeded(8);
        let n = 200_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let (a, b) = draw_eps(&mut rng);
            s1 += a * a;
            s2 += b * b;
        }
        assert!(((s1 / n as f64).sqrt() - EPS_LEAD_SD).abs() < 0.01);
        assert!(((s2 / n as f64).sqrt() - EPS_LAG_SD).abs() < 0.01);
    }

    fn vehicle(lane: u8, x: f64) -> Vehicle {
        Vehicle {
            id: 1,
            class: VehicleClass::SmartCar,
            lane,
            x,
            speed: 90.0,
            accel: 0.0,
            desired_speed: 100.0,
            length: 15.0,
            a_max: 8.0,
            lc: LcState::None,
            entry_time: 0.0,
            request: None,
            cooldown_until: 0.0,
            attempt_eps: None,
            stopped: false,
        }
    }

    #[test]
    fn distances_to_lane_ends() {
        let c = Corridor::new(&i81_links());
        assert!((distance_to_lane_end(&vehicle(4, 0.0), &c).unwrap() - 6273.672).abs() < 1e-9);
        let link3 = c.link_start(3);
        assert!((distance_to_lane_end(&vehicle(3, link3), &c).unwrap() - 4288.867).abs() < 1e-9);
        assert_eq!(distance_to_lane_end(&vehicle(4, c.lane_end(4)), &c).unwrap(), 0.0);
        assert!(matches!(
            distance_to_lane_end(&vehicle(2, 0.0), &c),
            Err(AdvisorError::ThroughLane(2))
        ));
    }

    fn one_table() -> LookupTable {
        let grid = GridSpec::new(vec![vec![0.0, 200.0], vec![-5.0, 5.0], vec![0.1, 2.0]]).unwrap();
        LookupTable::from_parts(
            grid,
            vec![1.0; 8],
            TableMeta {
                version: 1,
                samples: 0,
                seed: 0,
            },
        )
        .unwrap()
    }

    fn stats() -> StatsTable {
        StatsTable::new([IntervalTrafficStats {
            link: 1,
            lane: 3,
            interval: 0,
            v_mean: 27.0,
            mu: 3.4,
            sigma: 0.8,
            n_obs: 50,
            inherited: false,
        }])
    }

    fn input(lane: u8, d_ft: f64) -> AdviceInput {
        AdviceInput {
            t: 10.0,
            class: VehicleClass::SmartCar,
            lane,
            link: 1,
            d_ft,
            speed_ftps: 95.0,
        }
    }

    #[test]
    fn certain_success_keeps() {
        let out = advise(&input(4, 6000.0), &stats(), &one_table(), &AdvisorConfig::new(0.999)).unwrap();
        assert_eq!(out.advice, Advice::Keep);
        assert_eq!(out.p, 1.0);
    }

    #[test]
    fn infeasible_remainder_changes_now() {
        // 95 ft/s for 3 s needs 285 ft; 200 ft is too short.
        let out = advise(&input(4, 200.0), &stats(), &one_table(), &AdvisorConfig::new(0.5)).unwrap();
        assert_eq!(out.advice, Advice::ChangeNow { target_lane: 3 });
        assert_eq!(out.p, 0.0);
        let out = advise(&input(4, 0.0), &stats(), &one_table(), &AdvisorConfig::new(0.5)).unwrap();
        assert_eq!(out.advice, Advice::ChangeNow { target_lane: 3 });
    }

    #[test]
    fn rightmost_lanes_and_plain_cars_are_rejected() {
        let cfg = AdvisorConfig::new(0.9);
        assert!(matches!(
            advise(&input(2, 500.0), &stats(), &one_table(), &cfg),
            Err(AdvisorError::Inactive { .. })
        ));
        let mut car = input(4, 500.0);
        car.class = VehicleClass::Car;
        assert!(advise(&car, &stats(), &one_table(), &cfg).is_err());
    }

    #[test]
    fn missing_stats_is_an_error_and_later_intervals_inherit() {
        let cfg = AdvisorConfig::new(0.9);
        let mut other_link = input(4, 5000.0);
        other_link.link = 2;
        assert!(matches!(
            advise(&other_link, &stats(), &one_table(), &cfg),
            Err(AdvisorError::MissingStats { link: 2, lane: 3, .. })
        ));
        let mut late = input(4, 5000.0);
        late.t = 5000.0;
        assert!(advise(&late, &stats(), &one_table(), &cfg).unwrap().inherited);
    }

    #[test]
    fn memo_agrees_with_fresh_evaluation() {
        let table = Arc::new(one_table());
        let st = Arc::new(stats());
        let cfg = AdvisorConfig::new(0.9);
        let mut adv = Advisor::new(cfg, table.clone(), st.clone()).unwrap();
        for d in [150.0, 151.0, 290.0, 5000.0] {
            let a = adv.advise(&input(4, d)).unwrap();
            let b = adv.advise(&input(4, d)).unwrap();
            let fresh = advise(&input(4, d), &st, &table, &cfg).unwrap();
            assert_eq!(a, b);
            assert_eq!(a, fresh);
        }
        assert_eq!(adv.memo_len(), 3);
    }

    #[test]
    fn query_follows_speed_and_gap_rules() {
        let cfg = AdvisorConfig::new(0.9);
        let q = build_query(877.0, 29.0, 27.0, 3.4, 0.8, &cfg).unwrap();
        let lane = q.lanes[0];
        assert_eq!(lane.v, 33.0);
        assert!((lane.g - (1.6 * 27.0 + 1.0 + cfg.stream_vehicle_length)).abs() < 1e-12);
        assert_eq!(lane.t, 3.0);
        assert_eq!(q.ego_v, 29.0);
        let slow = build_query(877.0, 0.0, 27.0, 3.4, 0.8, &cfg).unwrap();
        assert_eq!(slow.ego_v, cfg.min_speed);
    }

    #[test]
    fn trace_csv_header() {
        let row = AdvisorTraceRow {
            t_s: 1.0,
            vehicle_id: 3,
            lane: 4,
            d_ft: 100.0,
            p_estimate: 0.5,
            p_l: 0.9,
            decision: "change_now",
            safety_pass: false,
        };
        let mut buf = Vec::new();
        write_trace_csv(&[row], &mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("t_s,vehicle_id,lane,d_ft,p_estimate,p_l,decision,safety_pass\n"));
    }
}

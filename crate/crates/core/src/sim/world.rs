use std::collections::VecDeque;

use rand::Rng as _;
use rand_distr::{Distribution, Poisson};
use thiserror::Error;

use crate::advisor::{self, Advice, AdviceInput, Advisor, AdvisorError, AdvisorTraceRow, Neighbor};
use crate::headway::DetectorObservation;
use crate::metrics::{LaneDeparture, TimeSpaceAccumulator, TravelRecord};
use crate::rng::{stream, Rng, Stream};

use super::config::{BehaviorParams, ConfigError, Corridor, SimConfig, FTPS_PER_MPH, M_PER_FT};
use super::events::{Event, EventKind};
use super::following::{accel_towards, Obstacle};
use super::vehicle::{LcState, MergeRequest, Urgency, Vehicle, VehicleClass};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Advisor(#[from] AdvisorError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InvariantViolation {
    #[error("conservation: spawned {spawned} != exited {exited} + on road {on_road} + queued {queued}")]
    Conservation {
        spawned: u64,
        exited: u64,
        on_road: usize,
        queued: usize,
    },
    #[error("vehicles {follower} and {leader} overlap on lane {lane} (gap {gap})")]
    Overlap {
        lane: u8,
        follower: u64,
        leader: u64,
        gap: f64,
    },
    #[error("vehicle {id} has speed {speed}")]
    Speed { id: u64, speed: f64 },
    #[error("vehicle {id} is past the end of lane {lane} at {x}")]
    BlockedLane { id: u64, lane: u8, x: f64 },
}

#[derive(Debug, Clone)]
struct Queued {
    id: u64,
    class: VehicleClass,
    desired_speed: f64,
    waiting_logged: bool,
}

/// Outcome of a lane-change feasibility check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gate {
    /// Gap and induced-deceleration acceptance of the built-in driver,
    /// relaxed by urgency in `[0, 1]`.
    Internal { urgency: f64 },
    /// Advised change: critical-gap check with the given noise draws.
    Advised { eps: (f64, f64) },
}

/// Everything a finished run hands to post-processing.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub events: Vec<Event>,
    pub detectors: Vec<DetectorObservation>,
    pub travel: Vec<TravelRecord>,
    pub departures: Vec<LaneDeparture>,
    /// One accumulator per lane, index `lane - 1`.
    pub timespace: Vec<TimeSpaceAccumulator>,
    pub advisor_trace: Vec<AdvisorTraceRow>,
    pub gridlock_at: Option<f64>,
    pub end_t: f64,
    pub spawned: u64,
    pub exited: u64,
}

/// One simulated corridor.
pub struct World {
    pub cfg: SimConfig,
    pub corridor: Corridor,
    pub t: f64,
    steps: u64,
    pub vehicles: Vec<Vehicle>,
    queue: VecDeque<Queued>,
    next_id: u64,
    rng_spawn: Rng,
    rng_advisor: Rng,
    advisor: Option<Advisor>,
    pub events: Vec<Event>,
    pub detectors: Vec<DetectorObservation>,
    pub travel: Vec<TravelRecord>,
    pub departures: Vec<LaneDeparture>,
    pub timespace: Vec<TimeSpaceAccumulator>,
    spawned: u64,
    exited: u64,
    last_motion: f64,
    pub gridlock_at: Option<f64>,
    /// Per lane (index = lane), vehicle indices ordered by `(x, id)`.
    lanes: Vec<Vec<usize>>,
    /// Per lane, indices of vehicles requesting a merge into it.
    requests: Vec<Vec<usize>>,
    /// Travel-measurement entry time per vehicle id.
    enter_times: std::collections::HashMap<u64, f64>,
}

impl World {
    /// A world without an advisor; `cfg.p_l` must then be `None`.
    pub fn new(cfg: SimConfig) -> Result<Self, SimError> {
        Self::with_advisor(cfg, None)
    }

    pub fn with_advisor(cfg: SimConfig, advisor: Option<Advisor>) -> Result<Self, SimError> {
        cfg.validate()?;
        if cfg.p_l.is_some() != advisor.is_some() {
            return Err(ConfigError::Invalid {
                field: "p_l",
                reason: "an advisor is required exactly when p_l is set".into(),
            }
            .into());
        }
        let corridor = Corridor::new(&cfg.links);
        let timespace = (1..=corridor.max_lanes())
            .map(|lane| {
                TimeSpaceAccumulator::new(
                    (cfg.seeding_end_s, cfg.total_s),
                    corridor.lane_end(lane),
                    cfg.timespace_cell,
                )
            })
            .collect();
        let lanes = vec![Vec::new(); corridor.max_lanes() as usize + 1];
        Ok(Self {
            rng_spawn: stream(cfg.seed, Stream::Spawn),
            rng_advisor: stream(cfg.seed, Stream::Advisor),
            corridor,
            t: 0.0,
            steps: 0,
            vehicles: Vec::new(),
            queue: VecDeque::new(),
            next_id: 1,
            advisor,
            events: Vec::new(),
            detectors: Vec::new(),
            travel: Vec::new(),
            departures: Vec::new(),
            timespace,
            spawned: 0,
            exited: 0,
            last_motion: 0.0,
            gridlock_at: None,
            requests: lanes.clone(),
            lanes,
            enter_times: Default::default(),
            cfg,
        })
    }

    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    pub fn spawned(&self) -> u64 {
        self.spawned
    }

    pub fn exited(&self) -> u64 {
        self.exited
    }

    pub fn is_finished(&self) -> bool {
        self.gridlock_at.is_some() || self.t >= self.cfg.total_s - 1e-9
    }

    /// Runs to the end (or gridlock) and returns the outputs.
    pub fn run(mut self) -> Result<RunOutput, SimError> {
        while !self.is_finished() {
            self.step()?;
        }
        Ok(self.finish())
    }

    pub fn finish(self) -> RunOutput {
        RunOutput {
            events: self.events,
            detectors: self.detectors,
            travel: self.travel,
            departures: self.departures,
            timespace: self.timespace,
            advisor_trace: self.advisor.map(|a| a.trace).unwrap_or_default(),
            gridlock_at: self.gridlock_at,
            end_t: self.t,
            spawned: self.spawned,
            exited: self.exited,
        }
    }

    fn event(&mut self, v: &Vehicle, kind: EventKind) {
        let (link, pos) = self.corridor.link_position(v.x.min(self.corridor.length));
        self.events.push(Event {
            t_s: self.t,
            vehicle_id: v.id,
            class: v.class,
            event: kind,
            link,
            lane: v.lane,
            position_ft: pos,
            speed_ftps: v.speed,
        });
    }

    fn params_at(&self, x: f64) -> &BehaviorParams {
        self.cfg.behavior(self.corridor.behavior_at(x))
    }

    /// Advances one step.
    pub fn step(&mut self) -> Result<(), SimError> {
        if self.is_finished() {
            return Ok(());
        }
        let dt = self.cfg.step_s;
        self.spawn_arrivals();
        self.rebuild_lanes();
        self.insert_from_queue();
        self.lane_change_phase()?;
        let accels = self.following_phase();
        let old_x: Vec<f64> = self.vehicles.iter().map(|v| v.x).collect();
        self.update_phase(&accels, dt);
        self.guard_phase(&old_x);
        self.t = ((self.steps + 1) as f64) * dt;
        self.steps += 1;
        self.completion_phase();
        self.record_crossings(&old_x);
        self.exit_phase();
        self.accumulate(dt);
        self.check_gridlock();
        Ok(())
    }

    // ---- spawning ----

    /// Draws this step's Poisson arrivals into the entry queue.
    pub fn spawn_arrivals(&mut self) {
        let lambda = self.cfg.flow_at(self.t) / 3600.0 * self.cfg.step_s;
        if lambda <= 0.0 {
            return;
        }
        let n = Poisson::new(lambda).expect("positive rate").sample(&mut self.rng_spawn) as u64;
        let (car, smart, _) = self.cfg.composition_at(self.t);
        let (lo, hi) = self.cfg.vehicles.desired_speed_mph;
        for _ in 0..n {
            let u: f64 = self.rng_spawn.random();
            let class = if u < car {
                VehicleClass::Car
            } else if u < car + smart {
                VehicleClass::SmartCar
            } else {
                VehicleClass::Hgv
            };
            let mph = lo + (hi - lo) * self.rng_spawn.random::<f64>();
            self.queue.push_back(Queued {
                id: self.next_id,
                class,
                desired_speed: mph * FTPS_PER_MPH,
                waiting_logged: false,
            });
            self.next_id += 1;
            self.spawned += 1;
        }
    }

    fn insert_from_queue(&mut self) {
        let cfg_entry_params = *self.params_at(0.0);
        while let Some(head) = self.queue.front().cloned() {
            let (length, a_max) = self.class_dims(head.class);
            let link1_end = self.corridor.link_start(1) + self.corridor.links[0].length_ft;
            let mut best: Option<(usize, f64, u8, f64)> = None;
            for lane in 1..=self.corridor.max_lanes() {
                if !self.corridor.lane_exists(lane, 0.0) {
                    continue;
                }
                let order = &self.lanes[lane as usize];
                let (gap, lead) = match order.first() {
                    Some(&j) => (self.vehicles[j].rear(), Some(&self.vehicles[j])),
                    None => (f64::INFINITY, None),
                };
                let Some(v_ins) = insertion_speed(head.desired_speed, a_max, gap, lead, &cfg_entry_params, &self.cfg)
                else {
                    continue;
                };
                let count = order.partition_point(|&j| self.vehicles[j].x < link1_end);
                let better = match best {
                    None => true,
                    Some((c, g, _, _)) => count < c || (count == c && gap > g),
                };
                if better {
                    best = Some((count, gap, lane, v_ins));
                }
            }
            let Some((_, _, lane, v_ins)) = best else {
                if !head.waiting_logged {
                    self.queue.front_mut().expect("non-empty").waiting_logged = true;
                    let ghost = self.make_vehicle(&head, 1, 0.0, length, a_max);
                    self.event(&ghost, EventKind::Wait);
                }
                break;
            };
            self.queue.pop_front();
            let mut v = self.make_vehicle(&head, lane, v_ins, length, a_max);
            v.entry_time = self.t;
            if self.cfg.travel_start_ft <= 0.0 {
                self.enter_times.insert(v.id, self.t);
            }
            self.event(&v, EventKind::Spawn);
            let idx = self.vehicles.len();
            self.vehicles.push(v);
            self.lanes[lane as usize].insert(0, idx);
            self.last_motion = self.t;
        }
    }

    fn class_dims(&self, class: VehicleClass) -> (f64, f64) {
        let vp = &self.cfg.vehicles;
        match class {
            VehicleClass::Hgv => (vp.hgv_length_ft, vp.hgv_accel),
            _ => (vp.car_length_ft, vp.car_accel),
        }
    }

    fn make_vehicle(&self, q: &Queued, lane: u8, speed: f64, length: f64, a_max: f64) -> Vehicle {
        Vehicle {
            id: q.id,
            class: q.class,
            lane,
            x: 0.0,
            speed,
            accel: 0.0,
            desired_speed: q.desired_speed,
            length,
            a_max,
            lc: LcState::None,
            entry_time: self.t,
            request: None,
            cooldown_until: 0.0,
            attempt_eps: None,
            stopped: false,
        }
    }

    // ---- lane bookkeeping ----

    fn key(&self, i: usize) -> (f64, u64) {
        (self.vehicles[i].x, self.vehicles[i].id)
    }

    fn rebuild_lanes(&mut self) {
        for l in self.lanes.iter_mut() {
            l.clear();
        }
        for (i, v) in self.vehicles.iter().enumerate() {
            self.lanes[v.lane as usize].push(i);
            if let Some(t) = v.target_lane() {
                self.lanes[t as usize].push(i);
            }
        }
        let vehicles = &self.vehicles;
        for l in self.lanes.iter_mut() {
            l.sort_unstable_by(|&a, &b| {
                vehicles[a]
                    .x
                    .total_cmp(&vehicles[b].x)
                    .then(vehicles[a].id.cmp(&vehicles[b].id))
            });
        }
    }

    /// `(follower, leader)` of vehicle `i` in `lane`, excluding `i` itself.
    fn around(&self, lane: u8, i: usize) -> (Option<usize>, Option<usize>) {
        let order = &self.lanes[lane as usize];
        let key = self.key(i);
        let p = order.partition_point(|&j| {
            let kj = self.key(j);
            kj.0 < key.0 || (kj.0 == key.0 && kj.1 < key.1)
        });
        let follower = if p > 0 { Some(order[p - 1]) } else { None };
        let mut q = p;
        if q < order.len() && order[q] == i {
            q += 1;
        }
        (follower, order.get(q).copied())
    }

    fn insert_into_lane(&mut self, lane: u8, i: usize) {
        let key = self.key(i);
        let order = &self.lanes[lane as usize];
        let p = order.partition_point(|&j| {
            let kj = (self.vehicles[j].x, self.vehicles[j].id);
            kj.0 < key.0 || (kj.0 == key.0 && kj.1 < key.1)
        });
        self.lanes[lane as usize].insert(p, i);
    }

    /// Lane-end obstacle seen from `x` on `lane`.
    fn lane_end_obstacle(&self, lane: u8, x: f64) -> Option<Obstacle> {
        self.corridor.lane_terminates(lane).then(|| Obstacle {
            gap: self.corridor.lane_end(lane) - x,
            speed: 0.0,
        })
    }

    /// Acceleration of a vehicle with speed `v`, desired speed `v0`, front at
    /// `x`, following `leader` on `lane` (plus the lane end).
    fn accel_in_lane(&self, v: f64, v0: f64, a_max: f64, x: f64, lane: u8, leader: Option<usize>) -> f64 {
        let params = self.params_at(x);
        let vp = &self.cfg.vehicles;
        let lead = leader.map(|j| Obstacle {
            gap: self.vehicles[j].rear() - x,
            speed: self.vehicles[j].speed,
        });
        let mut a = accel_towards(v, v0, a_max, lead, params, vp);
        if let Some(end) = self.lane_end_obstacle(lane, x) {
            a = a.min(accel_towards(v, v0, a_max, Some(end), params, vp));
        }
        a
    }

    // ---- lane changes ----

    /// Whether vehicle `i` may start a change into `target` now.
    pub fn lane_change_feasible(&self, i: usize, target: u8, gate: Gate) -> bool {
        let v = &self.vehicles[i];
        if !self.corridor.lane_exists(target, v.x) {
            return false;
        }
        let (follower, leader) = self.around(target, i);
        let params = self.params_at(v.x);
        let vp = &self.cfg.vehicles;
        let gap_front = leader.map_or(f64::INFINITY, |j| self.vehicles[j].rear() - v.x);
        let gap_rear = follower.map_or(f64::INFINITY, |j| v.rear() - self.vehicles[j].x);
        if gap_front < 0.0 || gap_rear < 0.0 {
            return false;
        }
        let a_self = self.accel_in_lane(v.speed, v.desired_speed, v.a_max, v.x, target, leader);
        let a_trail = follower.map(|j| {
            let f = &self.vehicles[j];
            accel_towards(
                f.speed,
                f.desired_speed,
                f.a_max,
                Some(Obstacle {
                    gap: gap_rear,
                    speed: v.speed,
                }),
                params,
                vp,
            )
        });
        match gate {
            Gate::Internal { urgency } => {
                let sr = params.safety_reduction;
                if gap_front < sr * (params.cc0 + params.cc1 * v.speed) {
                    return false;
                }
                if let Some(j) = follower {
                    if gap_rear < sr * (params.cc0 + params.cc1 * self.vehicles[j].speed) {
                        return false;
                    }
                }
                let (own, trail) = params.lane_change_bounds(urgency);
                a_self >= own && a_trail.is_none_or(|a| a >= trail)
            }
            Gate::Advised { eps } => {
                // A change the follower physically cannot absorb is never started.
                if a_trail.is_some_and(|a| a < params.max_decel_trail) || a_self < params.max_decel_own {
                    return false;
                }
                let lead = leader.map(|j| Neighbor {
                    gap: gap_front * M_PER_FT,
                    dv: (self.vehicles[j].speed - v.speed) * M_PER_FT,
                });
                let lag = follower.map(|j| Neighbor {
                    gap: gap_rear * M_PER_FT,
                    dv: (self.vehicles[j].speed - v.speed) * M_PER_FT,
                });
                advisor::safety_check_with(lead, lag, eps).0
            }
        }
    }

    fn start_lane_change(&mut self, i: usize, target: u8) {
        let dur = self.cfg.vehicles.lane_change_s;
        {
            let v = &mut self.vehicles[i];
            v.lc = LcState::InProgress {
                target_lane: target,
                t_remaining: dur,
            };
            v.request = None;
            v.attempt_eps = None;
        }
        self.insert_into_lane(target, i);
        let snapshot = self.vehicles[i].clone();
        self.event(&snapshot, EventKind::LcStart);
    }

    fn mandatory_urgency(&self, v: &Vehicle) -> f64 {
        let lcd = self.corridor.lane_change_distance(v.lane);
        let dist = (self.corridor.lane_end(v.lane) - v.x).max(0.0);
        (1.0 - dist / lcd).clamp(0.0, 1.0)
    }

    /// Whether a discretionary move onto `target` at `x` is allowed at all.
    fn lane_open_for_entry(&self, target: u8, x: f64, speed: f64) -> bool {
        if !self.corridor.lane_exists(target, x) {
            return false;
        }
        if self.corridor.lane_terminates(target) {
            let dist = self.corridor.lane_end(target) - x;
            let lcd = self.corridor.lane_change_distance(target);
            return dist > lcd + speed * self.cfg.vehicles.lane_change_s;
        }
        true
    }

    fn advice_input(&self, v: &Vehicle, lane: u8) -> AdviceInput {
        AdviceInput {
            t: self.t,
            class: v.class,
            lane,
            link: self.corridor.link_at(v.x),
            d_ft: (self.corridor.lane_end(lane) - v.x).max(0.0),
            speed_ftps: v.speed,
        }
    }

    fn lane_change_phase(&mut self) -> Result<(), SimError> {
        for r in self.requests.iter_mut() {
            r.clear();
        }
        let advisor_on = self.advisor.is_some();
        let eval_every = self.advisor.as_ref().map_or(1, |a| a.cfg.eval_every.max(1) as u64);
        for i in 0..self.vehicles.len() {
            if self.vehicles[i].is_changing() {
                self.vehicles[i].request = None;
                continue;
            }
            let v = self.vehicles[i].clone();
            let advised = advisor_on
                && advisor::is_advised(v.class, v.lane)
                && self.corridor.lane_terminates(v.lane)
                && v.x < self.corridor.lane_end(v.lane);
            let mut request = None;
            // Advice can only add a change; without one the built-in driver
            // stays in charge.
            if advised && (self.steps + v.id).is_multiple_of(eval_every) {
                let input = self.advice_input(&v, v.lane);
                let adv = self.advisor.as_mut().expect("advisor on");
                let out = adv.advise(&input)?;
                if let Advice::ChangeNow { target_lane } = out.advice {
                    let eps = match v.attempt_eps {
                        Some(e) => e,
                        None => {
                            let e = advisor::draw_eps(&mut self.rng_advisor);
                            self.vehicles[i].attempt_eps = Some(e);
                            e
                        }
                    };
                    let pass = self.lane_change_feasible(i, target_lane, Gate::Advised { eps });
                    let adv = self.advisor.as_mut().expect("advisor on");
                    adv.trace.push(AdvisorTraceRow {
                        t_s: self.t,
                        vehicle_id: v.id,
                        lane: v.lane,
                        d_ft: input.d_ft,
                        p_estimate: out.p,
                        p_l: adv.cfg.p_l,
                        decision: "change_now",
                        safety_pass: pass,
                    });
                    if pass {
                        self.start_lane_change(i, target_lane);
                        continue;
                    }
                } else {
                    self.vehicles[i].attempt_eps = None;
                }
            }
            if self.corridor.lane_terminates(v.lane)
                && self.corridor.lane_end(v.lane) - v.x < self.corridor.lane_change_distance(v.lane)
            {
                let target = v.lane - 1;
                let urgency = self.mandatory_urgency(&v);
                if self.lane_change_feasible(i, target, Gate::Internal { urgency }) {
                    self.start_lane_change(i, target);
                    continue;
                }
                request = Some(MergeRequest {
                    target_lane: target,
                    urgency: Urgency::Mandatory,
                });
            }
            self.vehicles[i].request = request;
            if let Some(r) = request {
                self.requests[r.target_lane as usize].push(i);
                continue;
            }
            if self.t >= v.cooldown_until && (self.steps + v.id).is_multiple_of(10) {
                if let Some(target) = self.discretionary_choice(i)? {
                    self.start_lane_change(i, target);
                }
            }
        }
        let vehicles = &self.vehicles;
        for r in self.requests.iter_mut() {
            r.sort_unstable_by(|&a, &b| {
                vehicles[a]
                    .x
                    .total_cmp(&vehicles[b].x)
                    .then(vehicles[a].id.cmp(&vehicles[b].id))
            });
        }
        Ok(())
    }

    fn discretionary_choice(&mut self, i: usize) -> Result<Option<u8>, SimError> {
        let v = self.vehicles[i].clone();
        let vp = self.cfg.vehicles;
        let params = *self.params_at(v.x);
        let (_, leader) = self.around(v.lane, i);
        let a_cur = self.accel_in_lane(v.speed, v.desired_speed, v.a_max, v.x, v.lane, leader);
        let mut best: Option<(f64, u8)> = None;
        for target in [v.lane.wrapping_sub(1), v.lane + 1] {
            if target == 0 || !self.lane_open_for_entry(target, v.x, v.speed) {
                continue;
            }
            if advisor::is_advised(v.class, target) && self.corridor.lane_terminates(target) {
                let input = self.advice_input(&v, target);
                if let Some(adv) = self.advisor.as_mut() {
                    if matches!(adv.advise(&input)?.advice, Advice::ChangeNow { .. }) {
                        continue;
                    }
                }
            }
            let (_, new_leader) = self.around(target, i);
            let a_new = self.accel_in_lane(v.speed, v.desired_speed, v.a_max, v.x, target, new_leader);
            let mut threshold = vp.lc_incentive
                + if target > v.lane {
                    vp.keep_right_bias
                } else {
                    -vp.keep_right_bias
                };
            if params.cooperative_lc && target < v.lane && self.merger_alongside(i) {
                threshold = 0.0;
            }
            let gain = a_new - a_cur;
            if gain > threshold
                && best.is_none_or(|(g, _)| gain > g)
                && self.lane_change_feasible(i, target, Gate::Internal { urgency: 0.0 })
            {
                best = Some((gain, target));
            }
        }
        Ok(best.map(|(_, t)| t))
    }

    /// A vehicle on the lane to the left wants to merge into `i`'s lane near
    /// `i`.
    fn merger_alongside(&self, i: usize) -> bool {
        let v = &self.vehicles[i];
        let reqs = &self.requests[v.lane as usize];
        reqs.iter().any(|&m| {
            let mv = &self.vehicles[m];
            mv.lane == v.lane + 1 && (mv.x - v.x).abs() < 100.0
        })
    }

    // ---- longitudinal ----

    fn following_phase(&self) -> Vec<f64> {
        let vp = &self.cfg.vehicles;
        let mut out = Vec::with_capacity(self.vehicles.len());
        for (i, v) in self.vehicles.iter().enumerate() {
            let params = self.params_at(v.x);
            let (_, leader) = self.around(v.lane, i);
            let mut a = self.accel_in_lane(v.speed, v.desired_speed, v.a_max, v.x, v.lane, leader);
            if let Some(t) = v.target_lane() {
                let (_, l2) = self.around(t, i);
                a = a.min(self.accel_in_lane(v.speed, v.desired_speed, v.a_max, v.x, t, l2));
            }
            if let Some(req) = v.request {
                if params.advanced_merging {
                    // Match the target lane while waiting for a gap.
                    let (_, l2) = self.around(req.target_lane, i);
                    if let Some(j) = l2 {
                        let lead = Obstacle {
                            gap: self.vehicles[j].rear() - v.x,
                            speed: self.vehicles[j].speed,
                        };
                        let a_sync = accel_towards(v.speed, v.desired_speed, v.a_max, Some(lead), params, vp);
                        a = a.min(a_sync.max(params.acc_decel_own));
                    }
                }
            } else if !v.is_changing() {
                a = a.min(self.cooperative_accel(i, params));
            }
            out.push(a.max(params.max_decel_own));
        }
        out
    }

    /// Braking to let the nearest merger ahead in an adjacent lane in.
    fn cooperative_accel(&self, i: usize, params: &BehaviorParams) -> f64 {
        let v = &self.vehicles[i];
        let reqs = &self.requests[v.lane as usize];
        let p = reqs.partition_point(|&m| self.vehicles[m].x <= v.x);
        let range = 1.5 * (params.cc0 + params.cc1 * v.speed) + 20.0;
        let Some(&m) = reqs.get(p) else {
            return f64::INFINITY;
        };
        let mv = &self.vehicles[m];
        if mv.x - v.x > range + mv.length {
            return f64::INFINITY;
        }
        let lead = Obstacle {
            gap: mv.rear() - v.x,
            speed: mv.speed,
        };
        let a = accel_towards(
            v.speed,
            v.desired_speed,
            v.a_max,
            Some(lead),
            params,
            &self.cfg.vehicles,
        );
        if lead.gap > 0.0 && a >= params.coop_brake_decel {
            a
        } else {
            f64::INFINITY
        }
    }

    /// Semi-implicit Euler: the new speed, floored at zero, moves the vehicle.
    fn update_phase(&mut self, accels: &[f64], dt: f64) {
        for (v, &a) in self.vehicles.iter_mut().zip(accels) {
            v.accel = a;
            v.speed = (v.speed + a * dt).max(0.0);
            v.x += v.speed * dt;
        }
    }

    /// Removes any overlap left by the discrete update, front to back, and
    /// keeps vehicles behind the end of their lanes. Lane orders still hold
    /// pre-update positions, so walking in pre-update order finalizes every
    /// leader before its follower.
    fn guard_phase(&mut self, old_x: &[f64]) {
        let mut order: Vec<usize> = (0..self.vehicles.len()).collect();
        order.sort_unstable_by(|&a, &b| {
            old_x[b]
                .total_cmp(&old_x[a])
                .then(self.vehicles[b].id.cmp(&self.vehicles[a].id))
        });
        for i in order {
            let lanes_of = [Some(self.vehicles[i].lane), self.vehicles[i].target_lane()];
            for lane in lanes_of.into_iter().flatten() {
                if let Some(j) = self.pre_leader(lane, i, old_x) {
                    let (lx, ls) = (self.vehicles[j].rear(), self.vehicles[j].speed);
                    let v = &mut self.vehicles[i];
                    if v.x > lx {
                        v.x = lx;
                        v.speed = v.speed.min(ls);
                    }
                }
                if self.corridor.lane_terminates(lane) {
                    let end = self.corridor.lane_end(lane);
                    let v = &mut self.vehicles[i];
                    if v.x > end {
                        v.x = end;
                        v.speed = 0.0;
                    }
                }
            }
        }
    }

    fn pre_leader(&self, lane: u8, i: usize, old_x: &[f64]) -> Option<usize> {
        let order = &self.lanes[lane as usize];
        let key = (old_x[i], self.vehicles[i].id);
        let p = order.partition_point(|&j| {
            let kj = (old_x[j], self.vehicles[j].id);
            kj.0 < key.0 || (kj.0 == key.0 && kj.1 < key.1)
        });
        debug_assert_eq!(order.get(p), Some(&i));
        order.get(p + 1).copied()
    }

    fn completion_phase(&mut self) {
        let dt = self.cfg.step_s;
        let cooldown = self.cfg.vehicles.lc_cooldown_s;
        for i in 0..self.vehicles.len() {
            let LcState::InProgress {
                target_lane,
                t_remaining,
            } = self.vehicles[i].lc
            else {
                continue;
            };
            let left = t_remaining - dt;
            if left > 1e-9 {
                self.vehicles[i].lc = LcState::InProgress {
                    target_lane,
                    t_remaining: left,
                };
                continue;
            }
            let from = self.vehicles[i].lane;
            let v = &mut self.vehicles[i];
            v.lane = target_lane;
            v.lc = LcState::None;
            v.cooldown_until = self.t + cooldown;
            v.stopped = false;
            let snapshot = v.clone();
            self.departures.push(LaneDeparture {
                vehicle_id: snapshot.id,
                class: snapshot.class,
                lane: from,
                t: self.t,
                x: snapshot.x,
            });
            self.event(&snapshot, EventKind::LcDone);
        }
    }

    fn record_crossings(&mut self, old_x: &[f64]) {
        let dt = self.cfg.step_s;
        let t0 = self.t - dt;
        let n_links = self.corridor.links.len() as u8;
        for (i, &old_x) in old_x.iter().enumerate() {
            let v = self.vehicles[i].clone();
            let new_x = v.x;
            if new_x <= old_x {
                continue;
            }
            let at = |p: f64| t0 + dt * ((p - old_x) / (new_x - old_x)).clamp(0.0, 1.0);
            for link in 1..=n_links {
                let mid = self.corridor.link_midpoint(link);
                if old_x < mid && new_x >= mid {
                    self.detectors.push(DetectorObservation {
                        time: at(mid),
                        link,
                        lane: v.lane,
                        speed: v.speed * M_PER_FT,
                        vehicle_id: v.id,
                    });
                    let (_, pos) = self.corridor.link_position(v.x);
                    self.events.push(Event {
                        t_s: at(mid),
                        vehicle_id: v.id,
                        class: v.class,
                        event: EventKind::Detector,
                        link,
                        lane: v.lane,
                        position_ft: pos,
                        speed_ftps: v.speed,
                    });
                }
            }
            let start = self.cfg.travel_start_ft;
            if start > 0.0 && old_x < start && new_x >= start {
                self.enter_times.insert(v.id, at(start));
            }
            let end = self.cfg.travel_end_ft;
            if old_x < end && new_x >= end {
                if let Some(t_enter) = self.enter_times.remove(&v.id) {
                    self.travel.push(TravelRecord {
                        vehicle_id: v.id,
                        t_enter,
                        t_exit: at(end),
                        desired_speed: v.desired_speed,
                    });
                }
            }
            if v.speed < 0.1
                && !v.stopped
                && self.corridor.lane_terminates(v.lane)
                && self.corridor.lane_end(v.lane) - v.x < 50.0
            {
                self.vehicles[i].stopped = true;
                self.event(&v, EventKind::Wait);
            } else if v.speed > 1.0 && v.stopped {
                self.vehicles[i].stopped = false;
            }
        }
        // Stationary vehicles at a lane end did not move but may still need a
        // wait record.
        for i in 0..self.vehicles.len() {
            let v = &self.vehicles[i];
            if v.speed < 0.1
                && !v.stopped
                && self.corridor.lane_terminates(v.lane)
                && self.corridor.lane_end(v.lane) - v.x < 50.0
            {
                let snapshot = v.clone();
                self.vehicles[i].stopped = true;
                self.event(&snapshot, EventKind::Wait);
            }
        }
    }

    fn exit_phase(&mut self) {
        let length = self.corridor.length;
        let mut k = 0;
        while k < self.vehicles.len() {
            if self.vehicles[k].x >= length {
                let v = self.vehicles.remove(k);
                self.event(&v, EventKind::Exit);
                self.enter_times.remove(&v.id);
                self.exited += 1;
                self.last_motion = self.t;
            } else {
                k += 1;
            }
        }
    }

    fn accumulate(&mut self, dt: f64) {
        for v in &self.vehicles {
            self.timespace[v.lane as usize - 1].add(self.t, v.x, v.speed, dt);
        }
    }

    fn check_gridlock(&mut self) {
        if self.vehicles.iter().any(|v| v.speed > 1e-3) || self.vehicles.is_empty() {
            self.last_motion = self.t;
        }
        if self.t - self.last_motion >= self.cfg.gridlock_s {
            self.gridlock_at = Some(self.t);
        }
    }

    /// Checks every simulator invariant on the current state.
    pub fn check_invariants(&self) -> Result<(), InvariantViolation> {
        let on_road = self.vehicles.len();
        if self.spawned != self.exited + on_road as u64 + self.queue.len() as u64 {
            return Err(InvariantViolation::Conservation {
                spawned: self.spawned,
                exited: self.exited,
                on_road,
                queued: self.queue.len(),
            });
        }
        let max_desired = self.cfg.vehicles.desired_speed_mph.1 * FTPS_PER_MPH;
        for v in &self.vehicles {
            if !(v.speed >= 0.0 && v.speed <= 1.1 * max_desired) {
                return Err(InvariantViolation::Speed {
                    id: v.id,
                    speed: v.speed,
                });
            }
            for lane in [Some(v.lane), v.target_lane()].into_iter().flatten() {
                if self.corridor.lane_terminates(lane) && v.x > self.corridor.lane_end(lane) + 1e-9 {
                    return Err(InvariantViolation::BlockedLane { id: v.id, lane, x: v.x });
                }
            }
        }
        for lane in 1..=self.corridor.max_lanes() {
            let mut occ: Vec<&Vehicle> = self.vehicles.iter().filter(|v| v.occupies(lane)).collect();
            occ.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.id.cmp(&b.id)));
            for w in occ.windows(2) {
                let gap = w[1].rear() - w[0].x;
                if gap < -1e-6 {
                    return Err(InvariantViolation::Overlap {
                        lane,
                        follower: w[0].id,
                        leader: w[1].id,
                        gap,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Entry speed for a vehicle inserted at the corridor start with `gap` to the
/// last vehicle of the lane, or `None` if the lane cannot take it yet.
fn insertion_speed(
    desired: f64,
    a_max: f64,
    gap: f64,
    lead: Option<&Vehicle>,
    params: &BehaviorParams,
    cfg: &SimConfig,
) -> Option<f64> {
    if gap < params.cc0 + 1.0 {
        return None;
    }
    let Some(lead) = lead else {
        return Some(desired);
    };
    let ok = |v: f64| {
        gap >= params.cc0 + params.cc1 * v
            && accel_towards(
                v,
                desired,
                a_max,
                Some(Obstacle { gap, speed: lead.speed }),
                params,
                &cfg.vehicles,
            ) >= params.acc_decel_own
    };
    if ok(desired) {
        return Some(desired);
    }
    let (mut lo, mut hi) = (0.0, desired);
    if !ok(lo) {
        return None;
    }
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(lo)
}

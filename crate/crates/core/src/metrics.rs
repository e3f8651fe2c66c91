//! Measures of effectiveness: per-vehicle delay, interval statistics, run
//! aggregation, lane departure density and time-space grids.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::headway::INTERVAL_S;
use crate::sim::config::FTPS_PER_MPH;
use crate::sim::vehicle::VehicleClass;

/// Scaling constant of the departure-density plot transform.
pub const PLOT_K: f64 = 10_000.0;
/// Speed reported for time-space cells nobody occupied, mph.
pub const FREE_FLOW_SENTINEL_MPH: f64 = 80.0;
const FT_PER_MI: f64 = 5280.0;

/// A completed traversal of the travel-time section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TravelRecord {
    pub vehicle_id: u64,
    pub t_enter: f64,
    pub t_exit: f64,
    /// ft/s.
    pub desired_speed: f64,
}

/// The travel-time section and its completed traversals.
#[derive(Debug, Clone, PartialEq)]
pub struct TravelTimeMeasurement {
    pub start_ft: f64,
    pub end_ft: f64,
    pub records: Vec<TravelRecord>,
}

impl TravelTimeMeasurement {
    pub fn distance_ft(&self) -> f64 {
        self.end_ft - self.start_ft
    }

    /// `(t_exit, delay)` for every record.
    pub fn delays(&self) -> Vec<DelaySample> {
        self.records
            .iter()
            .map(|r| DelaySample {
                t_exit: r.t_exit,
                delay: vehicle_delay(r, self.distance_ft()),
            })
            .collect()
    }
}

/// Actual minus free-flow travel time over `distance_ft`, floored at zero.
pub fn vehicle_delay(record: &TravelRecord, distance_ft: f64) -> f64 {
    ((record.t_exit - record.t_enter) - distance_ft / record.desired_speed).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelaySample {
    pub t_exit: f64,
    pub delay: f64,
}

/// One simulation run reduced to what aggregation needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_index: u32,
    pub seed: u64,
    pub completed: bool,
    /// Data before this time is usable; a multiple of the interval length.
    pub valid_until_s: f64,
    pub delays: Vec<DelaySample>,
}

impl RunRecord {
    /// Builds a record, truncating to the last full interval when the run
    /// ended early at `ended_at`.
    pub fn new(run_index: u32, seed: u64, total_s: f64, ended_at: Option<f64>, delays: Vec<DelaySample>) -> Self {
        let (completed, valid_until_s) = match ended_at {
            None => (true, total_s),
            Some(t) => (false, (t / INTERVAL_S).floor() * INTERVAL_S),
        };
        let delays = delays.into_iter().filter(|d| d.t_exit < valid_until_s).collect();
        Self {
            run_index,
            seed,
            completed,
            valid_until_s,
            delays,
        }
    }
}

/// Mean `m`, population standard deviation `s` and maximum `a` of delays.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalStats {
    pub interval_start_s: f64,
    pub interval_end_s: f64,
    pub m: f64,
    pub s: f64,
    pub a: f64,
    pub n_vehicles: usize,
}

/// Statistics of the delays exiting in `[start, end)`, or `None` if no
/// vehicle did.
pub fn delay_stats(delays: &[DelaySample], start: f64, end: f64) -> Option<IntervalStats> {
    let xs: Vec<f64> = delays
        .iter()
        .filter(|d| d.t_exit >= start && d.t_exit < end)
        .map(|d| d.delay)
        .collect();
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let s = (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt();
    let a = xs.iter().copied().fold(0.0, f64::max);
    Some(IntervalStats {
        interval_start_s: start,
        interval_end_s: end,
        m,
        s,
        a,
        n_vehicles: xs.len(),
    })
}

/// Run-averaged statistics with the number of contributing runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub start_s: f64,
    pub end_s: f64,
    pub m: f64,
    pub s: f64,
    pub a: f64,
    pub n_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Aggregate {
    /// Over the whole analysis period, completed runs only.
    pub period: Option<AggregateStats>,
    /// Per interval, including early-terminated runs up to their valid time.
    pub intervals: Vec<AggregateStats>,
}

fn average(rows: &[IntervalStats], start: f64, end: f64) -> Option<AggregateStats> {
    if rows.is_empty() {
        return None;
    }
    let n = rows.len() as f64;
    Some(AggregateStats {
        start_s: start,
        end_s: end,
        m: rows.iter().map(|r| r.m).sum::<f64>() / n,
        s: rows.iter().map(|r| r.s).sum::<f64>() / n,
        a: rows.iter().map(|r| r.a).sum::<f64>() / n,
        n_runs: rows.len(),
    })
}

/// Averages per-run statistics over `period`, split into intervals of
/// `interval_s`. Runs are ordered by `(run_index, seed)` first so the result
/// does not depend on input order.
pub fn aggregate_runs(runs: &[RunRecord], period: (f64, f64), interval_s: f64) -> Aggregate {
    let mut runs: Vec<&RunRecord> = runs.iter().collect();
    runs.sort_by_key(|r| (r.run_index, r.seed));
    let per_run: Vec<IntervalStats> = runs
        .iter()
        .filter(|r| r.completed)
        .filter_map(|r| delay_stats(&r.delays, period.0, period.1))
        .collect();
    let mut intervals = Vec::new();
    let mut start = period.0;
    while start < period.1 - 1e-9 {
        let end = (start + interval_s).min(period.1);
        let rows: Vec<IntervalStats> = runs
            .iter()
            .filter(|r| r.valid_until_s >= end)
            .filter_map(|r| delay_stats(&r.delays, start, end))
            .collect();
        if let Some(a) = average(&rows, start, end) {
            intervals.push(a);
        }
        start = end;
    }
    Aggregate {
        period: average(&per_run, period.0, period.1),
        intervals,
    }
}

/// Relative change in percent, `None` without a positive baseline.
pub fn pct_change(value: f64, baseline: f64) -> Option<f64> {
    (baseline > 0.0).then(|| 100.0 * (value - baseline) / baseline)
}

/// A vehicle leaving `lane` at time `t` and position `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneDeparture {
    pub vehicle_id: u64,
    pub class: VehicleClass,
    pub lane: u8,
    pub t: f64,
    pub x: f64,
}

/// A regular time-space grid; `values[it * nx + ix]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub t0: f64,
    pub x0: f64,
    pub dt: f64,
    pub dx: f64,
    pub nt: usize,
    pub nx: usize,
    pub values: Vec<f64>,
}

impl Grid {
    pub fn zeros(t_range: (f64, f64), x_range: (f64, f64), cell: (f64, f64)) -> Self {
        let (dx, dt) = cell;
        let nt = ((t_range.1 - t_range.0) / dt).ceil().max(0.0) as usize;
        let nx = ((x_range.1 - x_range.0) / dx).ceil().max(0.0) as usize;
        Self {
            t0: t_range.0,
            x0: x_range.0,
            dt,
            dx,
            nt,
            nx,
            values: vec![0.0; nt * nx],
        }
    }

    /// Cell index of `(t, x)`, if inside.
    pub fn cell_of(&self, t: f64, x: f64) -> Option<usize> {
        let it = ((t - self.t0) / self.dt).floor();
        let ix = ((x - self.x0) / self.dx).floor();
        (it >= 0.0 && ix >= 0.0 && (it as usize) < self.nt && (ix as usize) < self.nx)
            .then(|| it as usize * self.nx + ix as usize)
    }

    pub fn get(&self, it: usize, ix: usize) -> f64 {
        self.values[it * self.nx + ix]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    /// Rows `t_cell,x_cell,value`, cell lower corners.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t_cell", "x_cell", "value"])?;
        for it in 0..self.nt {
            for ix in 0..self.nx {
                let t = self.t0 + it as f64 * self.dt;
                let x = self.x0 + ix as f64 * self.dx;
                wr.write_record([t.to_string(), x.to_string(), self.get(it, ix).to_string()])?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    /// A heatmap with time across and distance up.
    pub fn write_svg<W: Write>(&self, mut w: W, title: &str, range: (f64, f64)) -> std::io::Result<()> {
        let (cw, ch) = (4.0, 3.0);
        let (ml, mt) = (60.0, 30.0);
        let width = ml + self.nt as f64 * cw + 20.0;
        let height = mt + self.nx as f64 * ch + 40.0;
        writeln!(
            w,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
        )?;
        writeln!(w, r#"<text x="{ml}" y="18">{}</text>"#, escape(title))?;
        let span = (range.1 - range.0).max(f64::MIN_POSITIVE);
        for it in 0..self.nt {
            for ix in 0..self.nx {
                let u = ((self.get(it, ix) - range.0) / span).clamp(0.0, 1.0);
                let x = ml + it as f64 * cw;
                let y = mt + (self.nx - 1 - ix) as f64 * ch;
                writeln!(
                    w,
                    r#"<rect x="{x}" y="{y}" width="{cw}" height="{ch}" fill="{}"/>"#,
                    color(u)
                )?;
            }
        }
        let y_axis = mt + self.nx as f64 * ch;
        writeln!(
            w,
            r#"<text x="{ml}" y="{}">t {} s .. {} s; x {} ft .. {} ft; scale {:.3} .. {:.3}</text>"#,
            y_axis + 16.0,
            self.t0,
            self.t0 + self.nt as f64 * self.dt,
            self.x0,
            self.x0 + self.nx as f64 * self.dx,
            range.0,
            range.1
        )?;
        writeln!(w, "</svg>")
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Blue to yellow to red.
fn color(u: f64) -> String {
    let (r, g, b) = if u < 0.5 {
        let k = u / 0.5;
        (40.0 + 215.0 * k, 60.0 + 180.0 * k, 200.0 - 150.0 * k)
    } else {
        let k = (u - 0.5) / 0.5;
        (255.0, 240.0 - 200.0 * k, 50.0 - 30.0 * k)
    };
    format!("rgb({},{},{})", r as u8, g as u8, b as u8)
}

/// Departure counts per cell together with the cell area; `d_l = count /
/// area`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepartureDensity {
    pub counts: Vec<u64>,
    pub grid: Grid,
}

impl DepartureDensity {
    pub fn cell_area(&self) -> f64 {
        self.grid.dx * self.grid.dt
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Keeps only the last departure of each vehicle from `lane`, optionally
/// restricted to one class.
pub fn final_departures(departures: &[LaneDeparture], lane: u8, class: Option<VehicleClass>) -> Vec<LaneDeparture> {
    let mut last: BTreeMap<u64, LaneDeparture> = BTreeMap::new();
    for d in departures
        .iter()
        .filter(|d| d.lane == lane && class.is_none_or(|c| d.class == c))
    {
        match last.get(&d.vehicle_id) {
            Some(prev) if prev.t > d.t => {}
            _ => {
                last.insert(d.vehicle_id, *d);
            }
        }
    }
    last.into_values().collect()
}

/// Lane departure density: final departures per cell over the cell area.
/// `cell` is `(D ft, T s)`. Events outside the extent are dropped.
pub fn lane_departure_density(
    departures: &[LaneDeparture],
    lane: u8,
    class: Option<VehicleClass>,
    t_range: (f64, f64),
    x_range: (f64, f64),
    cell: (f64, f64),
) -> DepartureDensity {
    let mut grid = Grid::zeros(t_range, x_range, cell);
    let mut counts = vec![0u64; grid.values.len()];
    for d in final_departures(departures, lane, class) {
        if let Some(k) = grid.cell_of(d.t, d.x) {
            counts[k] += 1;
        }
    }
    let area = cell.0 * cell.1;
    grid.values = counts.iter().map(|&c| c as f64 / area).collect();
    DepartureDensity { counts, grid }
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum TransformError {
    #[error("blocked-lane share r must be positive, got {0}")]
    ZeroShare(f64),
    #[error("inflow must be positive, got {0}")]
    ZeroFlow(f64),
}

/// `ln(K d_l / (q r) + 1)` with `q` in veh/s.
pub fn plot_transform(d_l: f64, q: f64, r: f64) -> Result<f64, TransformError> {
    if r <= 0.0 {
        return Err(TransformError::ZeroShare(r));
    }
    if q <= 0.0 {
        return Err(TransformError::ZeroFlow(q));
    }
    Ok((PLOT_K * d_l / (q * r) + 1.0).ln())
}

/// Applies [`plot_transform`] cell by cell; on an undefined transform logs a
/// warning and returns the grid unchanged with `false`.
pub fn plot_transform_grid(grid: &Grid, q: f64, r: f64) -> (Grid, bool) {
    match plot_transform(0.0, q, r) {
        Ok(_) => (grid.map(|d| plot_transform(d, q, r).expect("checked")), true),
        Err(e) => {
            log::warn!("plotting untransformed departure density: {e}");
            (grid.clone(), false)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    /// veh/mi.
    Density,
    /// Presence-weighted mean, mph.
    Speed,
}

/// Per-lane presence and speed integrals over time-space cells.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSpaceAccumulator {
    presence: Grid,
    speed_time: Vec<f64>,
}

impl TimeSpaceAccumulator {
    /// Covers `t_range` and `[0, lane_end]` with `cell = (D ft, T s)`.
    pub fn new(t_range: (f64, f64), lane_end: f64, cell: (f64, f64)) -> Self {
        let presence = Grid::zeros(t_range, (0.0, lane_end), cell);
        let speed_time = vec![0.0; presence.values.len()];
        Self { presence, speed_time }
    }

    /// Adds a vehicle at `x` with speed `v` (ft/s) over the step of length
    /// `dt` ending at `t`.
    pub fn add(&mut self, t: f64, x: f64, v: f64, dt: f64) {
        if let Some(k) = self.presence.cell_of(t - 0.5 * dt, x) {
            self.presence.values[k] += dt;
            self.speed_time[k] += v * dt;
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.presence.nt, self.presence.nx)
    }

    /// Vehicle-seconds spent in cell `(it, ix)`.
    pub fn presence(&self, it: usize, ix: usize) -> f64 {
        self.presence.get(it, ix)
    }

    pub fn grid(&self, quantity: Quantity) -> Grid {
        let g = &self.presence;
        let values = match quantity {
            Quantity::Density => {
                let area = g.dx * g.dt;
                g.values.iter().map(|&p| p / area * FT_PER_MI).collect()
            }
            Quantity::Speed => g
                .values
                .iter()
                .zip(&self.speed_time)
                .map(|(&p, &st)| {
                    if p > 0.0 {
                        st / p / FTPS_PER_MPH
                    } else {
                        FREE_FLOW_SENTINEL_MPH
                    }
                })
                .collect(),
        };
        Grid { values, ..g.clone() }
    }
}

/// One row of the case summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub q_peak: f64,
    pub r: f64,
    /// Empty for baseline.
    pub p_l: Option<f64>,
    pub avg_s: Option<f64>,
    pub std_s: Option<f64>,
    pub max_s: Option<f64>,
    pub pct_change_vs_baseline: Option<f64>,
    pub n_valid_runs: usize,
}

pub fn write_summary_csv<W: Write>(rows: &[CaseSummary], w: W) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_summary_csv<R: std::io::Read>(r: R) -> csv::Result<Vec<CaseSummary>> {
    csv::Reader::from_reader(r).deserialize().collect()
}

/// One row of a per-interval table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRow {
    pub interval_start_s: f64,
    pub interval_end_s: f64,
    pub avg_s: f64,
    pub std_s: f64,
    pub max_s: f64,
    pub pct_change_vs_baseline: Option<f64>,
    pub n_valid_runs: usize,
}

/// Per-interval rows of `case`, with changes relative to `baseline` where
/// the same interval exists there.
pub fn interval_rows(case: &Aggregate, baseline: Option<&Aggregate>) -> Vec<IntervalRow> {
    case.intervals
        .iter()
        .map(|a| {
            let base = baseline.and_then(|b| {
                b.intervals
                    .iter()
                    .find(|x| x.start_s == a.start_s && x.end_s == a.end_s)
            });
            IntervalRow {
                interval_start_s: a.start_s,
                interval_end_s: a.end_s,
                avg_s: a.m,
                std_s: a.s,
                max_s: a.a,
                pct_change_vs_baseline: base.and_then(|b| pct_change(a.m, b.m)),
                n_valid_runs: a.n_runs,
            }
        })
        .collect()
}

pub fn write_interval_csv<W: Write>(rows: &[IntervalRow], w: W) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

//! Batch experiments: cases, the case matrix, paired seeds, run
//! orchestration with resumable on-disk outputs, and report emission.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advisor::{write_trace_csv, Advisor, AdvisorConfig, AdvisorError};
use crate::headway::{
    aggregate_interval_stats, average_stats, read_stats_csv, write_stats_csv, DetectorObservation, FallbackStats,
    IntervalTrafficStats, LinkLayout, StatsTable, INTERVAL_S,
};
use crate::metrics::{
    aggregate_runs, interval_rows, lane_departure_density, pct_change, plot_transform_grid, write_interval_csv,
    write_summary_csv, Aggregate, CaseSummary, DelaySample, Grid, Quantity, RunRecord, TravelTimeMeasurement,
};
use crate::prob::{build_lookup_table, GridSpec, LookupTable, ProbError};
use crate::sim::events::write_events_csv;
use crate::sim::{Corridor, RunOutput, SimConfig, SimError, VehicleClass, World};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Advisor(#[from] AdvisorError),
    #[error(transparent)]
    Prob(#[from] ProbError),
    #[error("io error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv error at {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("json error at {path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("invalid case: {0}")]
    Case(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// One cell of the case matrix: a flow, a blocked-lane share and either the
/// baseline or an advisor threshold, run over a paired seed schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseSpec {
    pub q_peak: f64,
    pub r: f64,
    /// `None` is the baseline without advice.
    pub p_l: Option<f64>,
    pub runs: u32,
    pub seed0: u64,
    pub seed_step: u64,
}

impl CaseSpec {
    pub fn new(q_peak: f64, r: f64, p_l: Option<f64>) -> Self {
        Self {
            q_peak,
            r,
            p_l,
            runs: 16,
            seed0: 42,
            seed_step: 5,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.runs == 0 {
            return Err(ExperimentError::Case("runs must be at least 1".into()));
        }
        if !(self.q_peak > 0.0) || !(0.0..=1.0).contains(&self.r) {
            return Err(ExperimentError::Case(format!(
                "bad flow {} or share {}",
                self.q_peak, self.r
            )));
        }
        if let Some(p) = self.p_l {
            if !(p > 0.0 && p < 1.0) {
                return Err(ExperimentError::Case(format!("threshold {p} outside (0, 1)")));
            }
        }
        Ok(())
    }

    /// Seed of run `k` (1-based); identical across thresholds so that
    /// comparisons are paired.
    pub fn seed(&self, k: u32) -> u64 {
        self.seed0 + (k as u64 - 1) * self.seed_step
    }

    pub fn baseline(&self) -> Self {
        Self { p_l: None, ..*self }
    }

    /// `q{q}_r{r}_p{p}`; `p` is `base` for the baseline.
    pub fn dir_name(&self) -> String {
        let p = match self.p_l {
            None => "base".to_string(),
            Some(p) => format!("{p}"),
        };
        format!("q{}_r{:.2}_p{p}", self.q_peak, self.r)
    }

    pub fn config(&self, scenario: &SimConfig, k: u32) -> SimConfig {
        SimConfig {
            q_peak: self.q_peak,
            r: self.r,
            p_l: self.p_l,
            seed: self.seed(k),
            ..scenario.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSpec {
    pub q_peaks: Vec<f64>,
    pub rs: Vec<f64>,
    /// `None` is the baseline.
    pub p_ls: Vec<Option<f64>>,
    pub runs: u32,
    pub seed0: u64,
    pub seed_step: u64,
    /// Explicit `(q_peak, r)` pairs; when set it replaces the cross product.
    pub pairs: Option<Vec<(f64, f64)>>,
}

impl MatrixSpec {
    /// Every flow, share and threshold, 16 runs each.
    pub fn full() -> Self {
        Self {
            q_peaks: vec![4400.0, 4600.0, 4800.0],
            rs: vec![0.10, 0.40, 0.70],
            p_ls: [
                None,
                Some(0.999),
                Some(0.99),
                Some(0.97),
                Some(0.95),
                Some(0.9),
                Some(0.85),
                Some(0.8),
                Some(0.75),
            ]
            .to_vec(),
            runs: 16,
            seed0: 42,
            seed_step: 5,
            pairs: None,
        }
    }

    /// Two representative cases, four thresholds, four runs.
    pub fn desk() -> Self {
        Self {
            p_ls: vec![None, Some(0.99), Some(0.9), Some(0.75)],
            runs: 4,
            pairs: Some(vec![(4600.0, 0.40), (4800.0, 0.70)]),
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let pairs_empty = self.pairs.as_ref().is_some_and(|p| p.is_empty());
        if (self.pairs.is_none() && (self.q_peaks.is_empty() || self.rs.is_empty()))
            || pairs_empty
            || self.p_ls.is_empty()
        {
            return Err(ExperimentError::Case("matrix lists must be non-empty".into()));
        }
        Ok(())
    }

    /// All cases, baseline first within each `(q, r)` block.
    pub fn cases(&self) -> Vec<CaseSpec> {
        let pairs: Vec<(f64, f64)> = match &self.pairs {
            Some(p) => p.clone(),
            None => self
                .q_peaks
                .iter()
                .flat_map(|&q| self.rs.iter().map(move |&r| (q, r)))
                .collect(),
        };
        let mut p_ls = self.p_ls.clone();
        p_ls.sort_by(|a, b| match (a, b) {
            (None, None) => std::cmp::Ordering::Equal,
            (None, _) => std::cmp::Ordering::Less,
            (_, None) => std::cmp::Ordering::Greater,
            (Some(x), Some(y)) => y.total_cmp(x),
        });
        pairs
            .into_iter()
            .flat_map(|(q, r)| {
                p_ls.iter().map(move |&p_l| CaseSpec {
                    q_peak: q,
                    r,
                    p_l,
                    runs: self.runs,
                    seed0: self.seed0,
                    seed_step: self.seed_step,
                })
            })
            .collect()
    }
}

/// Advisor ingredients shared by all runs of a case.
#[derive(Clone)]
pub struct AdvisorSetup {
    pub cfg: AdvisorConfig,
    pub table: Arc<LookupTable>,
    pub stats: Arc<StatsTable>,
}

/// Runs one simulation.
pub fn simulate(cfg: &SimConfig, advisor: Option<&AdvisorSetup>) -> Result<RunOutput, ExperimentError> {
    let adv = advisor
        .map(|a| Advisor::new(a.cfg, Arc::clone(&a.table), Arc::clone(&a.stats)))
        .transpose()?;
    Ok(World::with_advisor(cfg.clone(), adv)?.run()?)
}

/// Delay samples of a run's completed traversals.
pub fn run_delays(cfg: &SimConfig, out: &RunOutput) -> Vec<DelaySample> {
    TravelTimeMeasurement {
        start_ft: cfg.travel_start_ft,
        end_ft: cfg.travel_end_ft,
        records: out.travel.clone(),
    }
    .delays()
}

pub fn run_record(k: u32, cfg: &SimConfig, out: &RunOutput) -> RunRecord {
    RunRecord::new(k, cfg.seed, cfg.total_s, out.gridlock_at, run_delays(cfg, out))
}

/// Detector layout of the scenario: every link, over the whole run.
pub fn detector_layout(cfg: &SimConfig) -> LinkLayout {
    LinkLayout {
        links: cfg.links.iter().map(|l| (l.index, l.lanes)).collect(),
        period: (0.0, cfg.total_s),
        fallback: FallbackStats::default(),
    }
}

/// Per-interval lane statistics averaged over several runs.
pub fn derive_stats(cfg: &SimConfig, detectors: &[&[DetectorObservation]]) -> Vec<IntervalTrafficStats> {
    let layout = detector_layout(cfg);
    let per_run: Vec<_> = detectors.iter().map(|d| aggregate_interval_stats(d, &layout)).collect();
    average_stats(&per_run)
}

/// A case's run records, in run order.
#[derive(Debug, Clone)]
pub struct CaseResult {
    pub case: CaseSpec,
    pub records: Vec<RunRecord>,
}

impl CaseResult {
    pub fn all_valid(&self) -> bool {
        self.records.iter().all(|r| r.completed)
    }
}

/// Number of workers: `LANEDROP_WORKERS` if set, else the available cores.
pub fn worker_count() -> usize {
    std::env::var("LANEDROP_WORKERS")
        .ok()
        .and_then(|s| s.parse().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn pool(workers: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool")
}

/// Runs every seed of a case in memory, in parallel. Advised cases need
/// `advisor`.
pub fn run_case_in_memory(
    case: &CaseSpec,
    scenario: &SimConfig,
    advisor: Option<&AdvisorSetup>,
    workers: usize,
) -> Result<Vec<(SimConfig, RunOutput)>, ExperimentError> {
    use rayon::prelude::*;
    case.validate()?;
    if case.p_l.is_some() != advisor.is_some() {
        return Err(ExperimentError::Case(
            "advised cases need advisor inputs, baselines none".into(),
        ));
    }
    let setup = advisor.map(|a| AdvisorSetup {
        cfg: AdvisorConfig {
            p_l: case.p_l.expect("advised"),
            ..a.cfg
        },
        ..a.clone()
    });
    pool(workers).install(|| {
        (1..=case.runs)
            .into_par_iter()
            .map(|k| {
                let cfg = case.config(scenario, k);
                simulate(&cfg, setup.as_ref()).map(|o| (cfg, o))
            })
            .collect()
    })
}

/// Loads the table at `path`, building and saving it first if missing.
pub fn load_or_build_table(
    path: &Path,
    grid: &GridSpec,
    samples: u64,
    seed: u64,
) -> Result<LookupTable, ExperimentError> {
    if path.exists() {
        return Ok(LookupTable::load(path)?);
    }
    log::info!(
        "building lookup table: {} nodes, {samples} samples per node, seed {seed}, into {}",
        grid.node_count(),
        path.display()
    );
    let table = build_lookup_table(grid, samples, seed)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    table.save(path)?;
    Ok(table)
}

// ---- on-disk layout ----

const RECORD: &str = "record.json";
const CASE: &str = "case.json";
const STATS: &str = "stats.csv";
pub const MANIFEST: &str = "manifest.json";

/// Top-level record of which runs finished.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub cases: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub dir: String,
    pub case: CaseSpec,
    pub completed_runs: Vec<u32>,
    pub valid_runs: Vec<u32>,
}

impl Manifest {
    pub fn load(root: &Path) -> Result<Self, ExperimentError> {
        let path = root.join(MANIFEST);
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|source| ExperimentError::Json { path, source })
    }

    fn save(&self, root: &Path) -> Result<(), ExperimentError> {
        write_json(&root.join(MANIFEST), self)
    }

    fn upsert(&mut self, entry: ManifestEntry) {
        match self.cases.iter_mut().find(|e| e.dir == entry.dir) {
            Some(e) => *e = entry,
            None => self.cases.push(entry),
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let text = serde_json::to_string_pretty(value).map_err(|source| ExperimentError::Json {
        path: path.into(),
        source,
    })?;
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, text + "\n").map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ExperimentError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| ExperimentError::Json {
        path: path.into(),
        source,
    })
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, ExperimentError> {
    Ok(BufWriter::new(fs::File::create(path).map_err(io_err(path))?))
}

/// Writes one run's outputs; `record.json` goes last and marks completion.
fn write_run(dir: &Path, k: u32, cfg: &SimConfig, out: &RunOutput) -> Result<RunRecord, ExperimentError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let p = dir.join("events.csv");
    write_events_csv(&out.events, create(&p)?).map_err(csv_err(&p))?;
    let p = dir.join("detectors.csv");
    write_rows(&p, &out.detectors)?;
    let p = dir.join("travel.csv");
    write_rows(&p, &out.travel)?;
    let p = dir.join("departures.csv");
    write_rows(&p, &out.departures)?;
    if cfg.p_l.is_some() {
        let p = dir.join("advisor_trace.csv");
        write_trace_csv(&out.advisor_trace, create(&p)?).map_err(csv_err(&p))?;
    }
    for g in run_grids(cfg, out) {
        let p = dir.join(format!("{}.csv", g.name));
        g.grid.write_csv(create(&p)?).map_err(csv_err(&p))?;
    }
    let record = run_record(k, cfg, out);
    write_json(&dir.join(RECORD), &record)?;
    Ok(record)
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ExperimentError> {
    let mut wr = csv::Writer::from_writer(create(path)?);
    for r in rows {
        wr.serialize(r).map_err(csv_err(path))?;
    }
    wr.flush().map_err(io_err(path))
}

/// A named time-space grid of one run.
pub struct NamedGrid {
    pub name: String,
    pub grid: Grid,
}

/// Smart-car departure density on the terminating lanes, density and speed on the
/// terminating lanes and the lane below the lowest of them.
pub fn run_grids(cfg: &SimConfig, out: &RunOutput) -> Vec<NamedGrid> {
    let corridor = Corridor::new(&cfg.links);
    let period = (cfg.seeding_end_s, cfg.total_s);
    let mut grids = Vec::new();
    let dropped: Vec<u8> = (1..=corridor.max_lanes())
        .filter(|&l| corridor.lane_terminates(l))
        .collect();
    for &lane in &dropped {
        let d = lane_departure_density(
            &out.departures,
            lane,
            Some(VehicleClass::SmartCar),
            period,
            (0.0, corridor.lane_end(lane)),
            cfg.timespace_cell,
        );
        grids.push(NamedGrid {
            name: format!("departure_lane{lane}"),
            grid: d.grid,
        });
    }
    let mut shown = dropped.clone();
    if let Some(&lowest) = dropped.iter().min() {
        if lowest > 1 {
            shown.push(lowest - 1);
        }
    }
    shown.sort_unstable_by(|a, b| b.cmp(a));
    for lane in shown {
        let acc = &out.timespace[lane as usize - 1];
        grids.push(NamedGrid {
            name: format!("density_lane{lane}"),
            grid: acc.grid(Quantity::Density),
        });
        grids.push(NamedGrid {
            name: format!("speed_lane{lane}"),
            grid: acc.grid(Quantity::Speed),
        });
    }
    grids
}

/// Runs a case into `root/<case dir>/run{k}`, skipping runs already on disk.
/// Advised cases use statistics from the same-flow baseline under `root`,
/// which must have been run first.
pub fn run_case(
    case: &CaseSpec,
    scenario: &SimConfig,
    table: Option<Arc<LookupTable>>,
    root: &Path,
    workers: usize,
) -> Result<CaseResult, ExperimentError> {
    use rayon::prelude::*;
    case.validate()?;
    let dir = root.join(case.dir_name());
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    write_json(&dir.join(CASE), case)?;

    let setup = match case.p_l {
        None => None,
        Some(p_l) => {
            let table = table.ok_or_else(|| ExperimentError::Case("advised case without lookup table".into()))?;
            let stats = baseline_stats(&case.baseline(), scenario, root)?;
            Some(AdvisorSetup {
                cfg: AdvisorConfig::new(p_l),
                table,
                stats: Arc::new(StatsTable::new(stats)),
            })
        }
    };

    let records: Vec<RunRecord> = pool(workers).install(|| {
        (1..=case.runs)
            .into_par_iter()
            .map(|k| {
                let run_dir = dir.join(format!("run{k}"));
                let record_path = run_dir.join(RECORD);
                if record_path.exists() {
                    log::info!("{}: run {k} already complete", case.dir_name());
                    return read_json(&record_path);
                }
                let cfg = case.config(scenario, k);
                let out = simulate(&cfg, setup.as_ref())?;
                if let Some(t) = out.gridlock_at {
                    log::warn!("{}: run {k} gridlocked at {t} s", case.dir_name());
                }
                write_run(&run_dir, k, &cfg, &out)
            })
            .collect::<Result<_, _>>()
    })?;

    if case.p_l.is_none() {
        let stats = stats_from_dir(case, scenario, root)?;
        let p = dir.join(STATS);
        write_stats_csv(&stats, create(&p)?).map_err(csv_err(&p))?;
    }

    let mut manifest = Manifest::load(root)?;
    manifest.upsert(ManifestEntry {
        dir: case.dir_name(),
        case: *case,
        completed_runs: records.iter().map(|r| r.run_index).collect(),
        valid_runs: records.iter().filter(|r| r.completed).map(|r| r.run_index).collect(),
    });
    manifest.save(root)?;
    Ok(CaseResult { case: *case, records })
}

fn stats_from_dir(
    case: &CaseSpec,
    scenario: &SimConfig,
    root: &Path,
) -> Result<Vec<IntervalTrafficStats>, ExperimentError> {
    let dir = root.join(case.dir_name());
    let mut detectors = Vec::new();
    for k in 1..=case.runs {
        let p = dir.join(format!("run{k}")).join("detectors.csv");
        let mut rd = csv::Reader::from_path(&p).map_err(csv_err(&p))?;
        let rows: Vec<DetectorObservation> = rd.deserialize().collect::<Result<_, _>>().map_err(csv_err(&p))?;
        detectors.push(rows);
    }
    let refs: Vec<&[DetectorObservation]> = detectors.iter().map(|d| d.as_slice()).collect();
    Ok(derive_stats(scenario, &refs))
}

/// Statistics for advised runs: read from the baseline case directory.
fn baseline_stats(
    base: &CaseSpec,
    scenario: &SimConfig,
    root: &Path,
) -> Result<Vec<IntervalTrafficStats>, ExperimentError> {
    let p = root.join(base.dir_name()).join(STATS);
    if p.exists() {
        let f = fs::File::open(&p).map_err(io_err(&p))?;
        return read_stats_csv(f).map_err(csv_err(&p));
    }
    log::info!("running baseline {} to obtain lane statistics", base.dir_name());
    run_case(base, scenario, None, root, worker_count())?;
    let f = fs::File::open(&p).map_err(io_err(&p))?;
    read_stats_csv(f).map_err(csv_err(&p))
}

/// Runs every case of the matrix, baselines first.
pub fn run_matrix(
    matrix: &MatrixSpec,
    scenario: &SimConfig,
    table: Arc<LookupTable>,
    root: &Path,
    workers: usize,
) -> Result<Vec<CaseResult>, ExperimentError> {
    matrix.validate()?;
    matrix
        .cases()
        .iter()
        .map(|case| {
            log::info!("case {}", case.dir_name());
            run_case(case, scenario, Some(Arc::clone(&table)), root, workers)
        })
        .collect()
}

// ---- reports ----

/// What [`emit_reports`] produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub rows: Vec<CaseSummary>,
    /// Cases with fewer finished runs than requested.
    pub gaps: Vec<String>,
}

/// The analysis period: after seeding to the end of the run.
pub fn analysis_period(scenario: &SimConfig) -> (f64, f64) {
    (scenario.seeding_end_s, scenario.total_s)
}

fn load_case(dir: &Path) -> Result<Option<(CaseSpec, Vec<RunRecord>)>, ExperimentError> {
    let case_path = dir.join(CASE);
    if !case_path.exists() {
        return Ok(None);
    }
    let case: CaseSpec = read_json(&case_path)?;
    let mut records = Vec::new();
    for k in 1..=case.runs {
        let p = dir.join(format!("run{k}")).join(RECORD);
        if p.exists() {
            records.push(read_json(&p)?);
        }
    }
    Ok(Some((case, records)))
}

/// Summary table over every case under `input`, per-interval tables and
/// heatmaps into `out`.
pub fn emit_reports(input: &Path, out: &Path, scenario: &SimConfig) -> Result<ReportSummary, ExperimentError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let mut entries: Vec<PathBuf> = fs::read_dir(input)
        .map_err(io_err(input))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    let mut cases = Vec::new();
    let mut gaps = Vec::new();
    for dir in entries {
        if let Some((case, records)) = load_case(&dir)? {
            if records.len() < case.runs as usize {
                gaps.push(format!("{}: {} of {} runs", case.dir_name(), records.len(), case.runs));
            }
            cases.push((case, records, dir));
        }
    }
    cases.sort_by(|a, b| {
        let key = |c: &CaseSpec| (c.q_peak, c.r, c.p_l.map_or(f64::INFINITY, |p| p));
        let (ka, kb) = (key(&a.0), key(&b.0));
        ka.0.total_cmp(&kb.0)
            .then(ka.1.total_cmp(&kb.1))
            .then(kb.2.total_cmp(&ka.2))
    });

    let period = analysis_period(scenario);
    let aggs: Vec<Aggregate> = cases
        .iter()
        .map(|(_, r, _)| aggregate_runs(r, period, INTERVAL_S))
        .collect();
    let mut rows = Vec::new();
    for (i, (case, _, dir)) in cases.iter().enumerate() {
        let base = cases
            .iter()
            .position(|(c, _, _)| c.p_l.is_none() && c.q_peak == case.q_peak && c.r == case.r)
            .map(|j| &aggs[j]);
        let agg = &aggs[i];
        let p = agg.period;
        rows.push(CaseSummary {
            q_peak: case.q_peak,
            r: case.r,
            p_l: case.p_l,
            avg_s: p.map(|p| p.m),
            std_s: p.map(|p| p.s),
            max_s: p.map(|p| p.a),
            pct_change_vs_baseline: match (case.p_l, p, base.and_then(|b| b.period)) {
                (Some(_), Some(p), Some(b)) => pct_change(p.m, b.m),
                _ => None,
            },
            n_valid_runs: p.map_or(0, |p| p.n_runs),
        });
        let ip = out.join(format!("intervals_{}.csv", case.dir_name()));
        let irows = interval_rows(agg, if case.p_l.is_some() { base } else { None });
        write_interval_csv(&irows, create(&ip)?).map_err(csv_err(&ip))?;
        render_case_figures(case, dir, out, scenario)?;
    }
    let sp = out.join("summary.csv");
    write_summary_csv(&rows, create(&sp)?).map_err(csv_err(&sp))?;
    let gp = out.join("gaps.txt");
    let gap_text: String = gaps.iter().map(|g| format!("{g}\n")).collect();
    fs::write(&gp, gap_text).map_err(io_err(&gp))?;
    Ok(ReportSummary { rows, gaps })
}

fn read_grid(path: &Path, cell: (f64, f64)) -> Result<Grid, ExperimentError> {
    let mut rd = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut cells: Vec<(f64, f64, f64)> = Vec::new();
    for rec in rd.deserialize::<(f64, f64, f64)>() {
        cells.push(rec.map_err(csv_err(path))?);
    }
    let t0 = cells.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
    let x0 = cells.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let (dx, dt) = cell;
    let nt = cells
        .iter()
        .map(|c| ((c.0 - t0) / dt).round() as usize + 1)
        .max()
        .unwrap_or(0);
    let nx = cells
        .iter()
        .map(|c| ((c.1 - x0) / dx).round() as usize + 1)
        .max()
        .unwrap_or(0);
    let mut values = vec![0.0; nt * nx];
    for (t, x, v) in cells {
        values[((t - t0) / dt).round() as usize * nx + ((x - x0) / dx).round() as usize] = v;
    }
    Ok(Grid {
        t0,
        x0,
        dt,
        dx,
        nt,
        nx,
        values,
    })
}

/// Heatmaps of the first finished run of a case.
fn render_case_figures(case: &CaseSpec, dir: &Path, out: &Path, scenario: &SimConfig) -> Result<(), ExperimentError> {
    let Some(run) = (1..=case.runs)
        .map(|k| dir.join(format!("run{k}")))
        .find(|d| d.join(RECORD).exists())
    else {
        return Ok(());
    };
    let q = case.q_peak / 3600.0;
    let mut names: Vec<PathBuf> = fs::read_dir(&run)
        .map_err(io_err(&run))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let n = p.file_name().and_then(|s| s.to_str()).unwrap_or("");
            n.ends_with(".csv") && (n.starts_with("departure_") || n.starts_with("density_") || n.starts_with("speed_"))
        })
        .collect();
    names.sort();
    for p in names {
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("grid").to_string();
        let grid = read_grid(&p, scenario.timespace_cell)?;
        let (grid, title, range) = if stem.starts_with("departure_") {
            let (g, ok) = plot_transform_grid(&grid, q, case.r);
            let title = if ok {
                format!("{stem}: ln(K d_l/(q r) + 1)")
            } else {
                format!("{stem}: d_l")
            };
            let range = g.min_max();
            (g, title, (0.0, range.1.max(1e-12)))
        } else if stem.starts_with("density_") {
            (grid, format!("{stem}: veh/mi"), (0.0, 250.0))
        } else {
            (grid, format!("{stem}: mph"), (0.0, 80.0))
        };
        let sp = out.join(format!("{}_{stem}.svg", case.dir_name()));
        let title = format!("{} {title}", case.dir_name());
        grid.write_svg(create(&sp)?, &title, range).map_err(io_err(&sp))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_and_names() {
        let c = CaseSpec::new(4600.0, 0.4, Some(0.99));
        assert_eq!((c.seed(1), c.seed(2), c.seed(16)), (42, 47, 117));
        assert_eq!(c.dir_name(), "q4600_r0.40_p0.99");
        assert_eq!(c.baseline().dir_name(), "q4600_r0.40_pbase");
        assert!(CaseSpec { runs: 0, ..c }.validate().is_err());
    }

    #[test]
    fn matrices() {
        let full = MatrixSpec::full();
        assert_eq!(full.cases().len(), 81);
        let desk = MatrixSpec::desk();
        let cases = desk.cases();
        assert_eq!(cases.len(), 8);
        assert_eq!(cases[0].p_l, None);
        assert_eq!((cases[0].q_peak, cases[0].r), (4600.0, 0.4));
        assert_eq!(cases[1].p_l, Some(0.99));
        assert_eq!(cases[4].p_l, None);
        assert!(cases.iter().all(|c| c.runs == 4));
        assert!(MatrixSpec { p_ls: vec![], ..desk }.validate().is_err());
    }
}

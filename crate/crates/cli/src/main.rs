use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lanedrop::experiment::{
    emit_reports, load_or_build_table, run_case, run_matrix, worker_count, CaseResult, CaseSpec, MatrixSpec,
};
use lanedrop::prob::{build_lookup_table, GridSpec, LookupTable};
use lanedrop::sim::SimConfig;

/// Lane-drop advance-warning experiments.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the lane-change probability lookup table.
    BuildTable {
        /// Grid TOML with an `axes` array of three ascending node lists
        /// (sweep, gap_z, sigma); the default grid if omitted.
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Monte Carlo samples per node.
        #[arg(long, default_value_t = 100_000)]
        samples: u64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value = "table.lcpt")]
        out: PathBuf,
    },
    /// Run one case.
    Run(RunArgs),
    /// Run a case matrix.
    Matrix {
        #[arg(long, value_enum, default_value_t = Profile::Desk)]
        profile: Profile,
        #[command(flatten)]
        common: Common,
    },
    /// Summaries, per-interval tables and heatmaps from run outputs.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    Desk,
    Full,
}

#[derive(Args)]
struct Common {
    /// Scenario TOML; the built-in corridor if omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Lookup table; built with default settings if missing.
    #[arg(long, default_value = "table.lcpt")]
    table: PathBuf,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    q_peak: f64,
    #[arg(long)]
    r: f64,
    /// Advisor threshold.
    #[arg(long, conflicts_with = "baseline", required_unless_present = "baseline")]
    p_l: Option<f64>,
    /// Run without advice.
    #[arg(long)]
    baseline: bool,
    #[arg(long, default_value_t = 16)]
    runs: u32,
    #[arg(long, default_value_t = 42)]
    seed0: u64,
    #[arg(long, default_value_t = 5)]
    seed_step: u64,
    #[command(flatten)]
    common: Common,
}

fn load_scenario(path: Option<&Path>) -> Result<SimConfig> {
    let Some(path) = path else {
        return Ok(SimConfig::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    SimConfig::from_toml(&text).with_context(|| format!("loading scenario {}", path.display()))
}

fn load_grid(path: Option<&Path>) -> Result<GridSpec> {
    let Some(path) = path else {
        return Ok(GridSpec::default_grid());
    };
    #[derive(serde::Deserialize)]
    struct GridFile {
        axes: Vec<Vec<f64>>,
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: GridFile = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(GridSpec::new(file.axes)?)
}

fn table(path: &Path) -> Result<Arc<LookupTable>> {
    let t = load_or_build_table(path, &GridSpec::default_grid(), 100_000, 7)?;
    Ok(Arc::new(t))
}

fn report_status(results: &[CaseResult]) -> ExitCode {
    let mut ok = true;
    for r in results {
        let valid = r.records.iter().filter(|x| x.completed).count();
        println!("{}: {valid}/{} valid runs", r.case.dir_name(), r.records.len());
        ok &= r.all_valid();
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run() -> Result<ExitCode> {
    let cli = Cli::parse();
    let workers = worker_count();
    match cli.command {
        Command::BuildTable {
            grid,
            samples,
            seed,
            out,
        } => {
            let grid = load_grid(grid.as_deref())?;
            log::info!(
                "building {} nodes with {samples} samples each, seed {seed}",
                grid.node_count()
            );
            let t = build_lookup_table(&grid, samples, seed)?;
            t.save(&out)?;
            println!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Run(a) => {
            if !a.baseline && a.p_l.is_none() {
                bail!("either --p-l or --baseline is required");
            }
            let scenario = load_scenario(a.common.scenario.as_deref())?;
            let case = CaseSpec {
                q_peak: a.q_peak,
                r: a.r,
                p_l: if a.baseline { None } else { a.p_l },
                runs: a.runs,
                seed0: a.seed0,
                seed_step: a.seed_step,
            };
            let t = if case.p_l.is_some() {
                Some(table(&a.common.table)?)
            } else {
                None
            };
            let result = run_case(&case, &scenario, t, &a.common.out, workers)?;
            Ok(report_status(&[result]))
        }
        Command::Matrix { profile, common } => {
            let scenario = load_scenario(common.scenario.as_deref())?;
            let matrix = match profile {
                Profile::Desk => MatrixSpec::desk(),
                Profile::Full => MatrixSpec::full(),
            };
            let t = table(&common.table)?;
            let results = run_matrix(&matrix, &scenario, t, &common.out, workers)?;
            Ok(report_status(&results))
        }
        Command::Report { input, out, scenario } => {
            let scenario = load_scenario(scenario.as_deref())?;
            let summary = emit_reports(&input, &out, &scenario)?;
            println!("{} cases summarized into {}", summary.rows.len(), out.display());
            for g in &summary.gaps {
                println!("incomplete: {g}");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

//! `mrtss`: size, analyze and simulate micro-randomized trials.
//!
//! Machine-readable output goes to stdout, messages to stderr. Exit codes:
//! 0 success, 2 configuration or validation error, 3 numeric failure.

mod config;
mod presets;
mod render;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mrtss::dataset::TrialDataset;
use mrtss::estimator::{hypothesis_test_with, TestResult};
use mrtss::samplesize::{power, solve_sample_size, SampleSizeResult};
use mrtss::simulate::{monte_carlo, simulate_dataset, MonteCarloReport};
use serde::Serialize;
use serde_json::{json, Value};

use config::{RunConfig, DEFAULT_REPS, DEFAULT_SEED};

/// Environment variable giving the default worker-thread count.
const THREADS_ENV: &str = "MRTSS_THREADS";

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl From<mrtss::Error> for CliError {
    fn from(e: mrtss::Error) -> Self {
        use mrtss::Error::*;
        match e {
            Convergence(_) | Singular(_) | NotPositiveDefinite(_) | NoSolution(_)
            | InsufficientReps { .. } | IllConditioned { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(name = "mrtss", version, about = "Sample size, analysis and simulation for micro-randomized trials")]
struct Cli {
    /// Worker threads for Monte Carlo runs [default: $MRTSS_THREADS, else all cores].
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Minimal number of subjects for the target power.
    Size {
        #[command(flatten)]
        common: Common,
        /// Sweep average effect x average availability (rows: effect, columns: availability).
        #[arg(long)]
        grid: bool,
    },
    /// Analytic power at a given N, optionally with a Monte Carlo check.
    Power {
        #[command(flatten)]
        common: Common,
        /// Subjects; overrides `n` in the config.
        #[arg(long)]
        n: Option<usize>,
        /// Also estimate the power by simulation.
        #[arg(long)]
        mc: bool,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Test for a proximal effect in a CSV dataset.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Dataset with header subject,t,avail,action,prob,outcome.
        #[arg(long, short)]
        data: PathBuf,
    },
    /// Monte Carlo rejection rate under a generative scenario.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write every replicate as CSV (plus its in-memory test result).
        #[arg(long, value_name = "DIR")]
        export: Option<PathBuf>,
        /// Run a preset grid instead of a config; see the README for ids.
        #[arg(long, value_name = "ID", conflicts_with_all = ["config", "export"])]
        paper_table: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("mrtss: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<String, CliError> {
    if let Some(n) = thread_count(cli.threads)? {
        if n == 0 {
            return Err(CliError::Config("thread count must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot set up thread pool: {e}")))?;
    }
    match cli.command {
        Command::Size { common, grid } => {
            let cfg = require_config(&common)?;
            if grid {
                cmd_size_grid(&cfg, common.format)
            } else {
                cmd_size(&cfg, common.format)
            }
        }
        Command::Power { common, n, mc, reps, seed } => {
            let cfg = require_config(&common)?;
            cmd_power(&cfg, common.format, n, mc.then_some((reps, seed)))
        }
        Command::Analyze { common, data } => {
            let cfg = require_config(&common)?;
            cmd_analyze(&cfg, &data, common.format)
        }
        Command::Simulate { common, reps, seed, export, paper_table } => match paper_table {
            Some(id) => {
                presets::check(&id)?;
                let table = presets::run(&id, reps.unwrap_or(DEFAULT_REPS), seed.unwrap_or(DEFAULT_SEED))?;
                match common.format {
                    Format::Json => to_json(&table),
                    Format::Table => Ok(table.to_text()),
                }
            }
            None => {
                let cfg = require_config(&common)?;
                cmd_simulate(&cfg, common.format, reps, seed, export.as_deref())
            }
        },
    }
}

fn require_config(common: &Common) -> Result<RunConfig, CliError> {
    match &common.config {
        Some(path) => config::load(path),
        None => Err(CliError::Config("--config is required".into())),
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).expect("output serializes");
    s.push('\n');
    Ok(s)
}

/// Serializes `value` and adds the config digest as a top-level field.
fn with_digest<T: Serialize>(value: &T, cfg: &RunConfig) -> Value {
    let mut v = serde_json::to_value(value).expect("output serializes");
    if let Value::Object(map) = &mut v {
        map.insert("config_digest".into(), Value::String(cfg.digest()));
    }
    v
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |p| format!("{p:.4}"))
}

fn cmd_size(cfg: &RunConfig, format: Format) -> Result<String, CliError> {
    let inputs = cfg.sizing_inputs()?;
    let res: SampleSizeResult = solve_sample_size(&inputs)?;
    match format {
        Format::Json => to_json(&with_digest(&res, cfg)),
        Format::Table => Ok(render::table(
            &render::strings(["N", "c_N", "power(N)", "power(N-1)"]),
            &[vec![
                res.n.to_string(),
                format!("{:.4}", res.c_n),
                format!("{:.4}", res.achieved_power),
                fmt_opt(res.power_at_n_minus_1),
            ]],
        )),
    }
}

#[derive(Serialize)]
struct GridRow {
    average_effect: f64,
    cells: Vec<GridCell>,
}

#[derive(Serialize)]
struct GridCell {
    availability: f64,
    #[serde(flatten)]
    result: SampleSizeResult,
}

fn cmd_size_grid(cfg: &RunConfig, format: Format) -> Result<String, CliError> {
    let grid = cfg.grid.clone().unwrap_or_default();
    if grid.average_effects.is_empty() || grid.availabilities.is_empty() {
        return Err(CliError::Config("at `grid`: both axes need at least one value".into()));
    }
    // Validate the non-swept blocks once before sweeping.
    cfg.sizing_inputs()?;
    let mut rows = Vec::new();
    for &dbar in &grid.average_effects {
        let mut cells = Vec::new();
        for &tau in &grid.availabilities {
            let mut cell_cfg = cfg.clone();
            cell_cfg.effect.as_mut().expect("validated").average = dbar;
            cell_cfg.availability.as_mut().expect("validated").average = Some(tau);
            cell_cfg.availability.as_mut().expect("validated").values = None;
            let result = solve_sample_size(&cell_cfg.sizing_inputs()?)?;
            cells.push(GridCell { availability: tau, result });
        }
        rows.push(GridRow { average_effect: dbar, cells });
    }
    match format {
        Format::Json => to_json(&with_digest(&json!({ "alpha0": cfg.alpha0, "power": cfg.power, "rows": rows }), cfg)),
        Format::Table => {
            let mut header = vec!["avg effect \\ avg availability".to_string()];
            header.extend(grid.availabilities.iter().map(|t| format!("{t}")));
            let body: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    let mut row = vec![format!("{:.2}", r.average_effect)];
                    row.extend(r.cells.iter().map(|c| c.result.n.to_string()));
                    row
                })
                .collect();
            Ok(render::table(&header, &body))
        }
    }
}

#[derive(Serialize)]
struct PowerReport {
    n: usize,
    c_n: f64,
    analytic_power: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    monte_carlo: Option<MonteCarloReport>,
}

fn cmd_power(
    cfg: &RunConfig,
    format: Format,
    n: Option<usize>,
    mc: Option<(Option<usize>, Option<u64>)>,
) -> Result<String, CliError> {
    let n = n.or(cfg.n).ok_or_else(|| CliError::Config("missing field `n` (or pass --n)".into()))?;
    let inputs = cfg.sizing_inputs()?;
    let (p, q) = (inputs.features.p(), inputs.features.q());
    if n <= p + q {
        return Err(mrtss::Error::DegreesOfFreedom { n, p, q }.into());
    }
    // Validate the simulation blocks before any computation.
    let prepared = match mc {
        Some((reps, seed)) => {
            let reps = reps.or(cfg.reps).unwrap_or(DEFAULT_REPS);
            let seed = seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
            let settings = cfg.monte_carlo_settings(n, reps, seed)?;
            Some((cfg.model(seed)?, settings))
        }
        None => None,
    };
    let analytic_power = power(n, &inputs)?;
    let c_n = mrtss::samplesize::noncentrality(n, &inputs.effect, &inputs.q_matrix()?)?;
    let monte_carlo = match prepared {
        Some((model, settings)) => Some(monte_carlo(&model, &inputs.features, &settings)?),
        None => None,
    };
    let report = PowerReport { n, c_n, analytic_power, monte_carlo };
    match format {
        Format::Json => to_json(&with_digest(&report, cfg)),
        Format::Table => {
            let mut header = render::strings(["N", "c_N", "analytic"]);
            let mut row = vec![n.to_string(), format!("{c_n:.4}"), format!("{analytic_power:.4}")];
            if let Some(r) = &report.monte_carlo {
                header.extend(render::strings(["simulated", "95% CI", "reps", "failures"]));
                row.extend([
                    format!("{:.4}", r.rate),
                    format!("[{:.4}, {:.4}]", r.ci95[0], r.ci95[1]),
                    r.replicates.to_string(),
                    r.failures.to_string(),
                ]);
            }
            Ok(render::table(&header, &[row]))
        }
    }
}

fn read_dataset(path: &Path) -> Result<TrialDataset, CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Config(format!("cannot open {}: {e}", path.display())))?;
    TrialDataset::read_csv(std::io::BufReader::new(file))
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn test_result_table(r: &TestResult) -> String {
    let beta = r.beta_hat.iter().map(|b| format!("{b:.6}")).collect::<Vec<_>>().join(", ");
    render::table(
        &render::strings(["quantity", "value"]),
        &[
            render::strings(["subjects", &r.n.to_string()]),
            render::strings(["beta_hat", &format!("[{beta}]")]),
            render::strings(["statistic", &format!("{:.6}", r.statistic)]),
            render::strings(["critical value", &format!("{:.6}", r.critical_value)]),
            render::strings(["p-value", &format!("{:.6}", r.p_value)]),
            render::strings(["reject", &r.reject.to_string()]),
        ],
    )
}

fn cmd_analyze(cfg: &RunConfig, data: &Path, format: Format) -> Result<String, CliError> {
    let design = cfg.design()?;
    let features = cfg.features(&design)?;
    let opts = cfg.test_options()?;
    let dataset = read_dataset(data)?;
    if dataset.decisions() != design.total_decisions() {
        return Err(CliError::Config(format!(
            "dataset has {} decision times, design has {}",
            dataset.decisions(),
            design.total_decisions()
        )));
    }
    let result = hypothesis_test_with(&dataset, &features, &opts)?;
    match format {
        Format::Json => to_json(&with_digest(&result, cfg)),
        Format::Table => Ok(test_result_table(&result)),
    }
}

fn cmd_simulate(
    cfg: &RunConfig,
    format: Format,
    reps: Option<usize>,
    seed: Option<u64>,
    export: Option<&Path>,
) -> Result<String, CliError> {
    let reps = reps.or(cfg.reps).unwrap_or(DEFAULT_REPS);
    let seed = seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
    let n = match cfg.n {
        Some(n) => n,
        None => solve_sample_size(&cfg.sizing_inputs()?)?.n,
    };
    let settings = cfg.monte_carlo_settings(n, reps, seed)?;
    let model = cfg.model(seed)?;
    let features = cfg.features(model.design())?;
    let report = monte_carlo(&model, &features, &settings)?;
    if let Some(dir) = export {
        export_replicates(dir, &model, &features, &settings)?;
    }
    let out = json!({ "n": n, "report": report });
    match format {
        Format::Json => to_json(&out),
        Format::Table => Ok(render::table(
            &render::strings(["N", "reps", "rejections", "failures", "rate", "95% CI"]),
            &[vec![
                n.to_string(),
                report.replicates.to_string(),
                report.rejections.to_string(),
                report.failures.to_string(),
                format!("{:.4}", report.rate),
                format!("[{:.4}, {:.4}]", report.ci95[0], report.ci95[1]),
            ]],
        )),
    }
}

/// Writes `replicate_NNNNN.csv` and the matching `replicate_NNNNN.json`
/// test result (or error message) for every replicate.
fn export_replicates(
    dir: &Path,
    model: &mrtss::simulate::GenerativeModel,
    features: &mrtss::design::FeaturePaths,
    settings: &mrtss::simulate::MonteCarloSettings,
) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Config(format!("cannot write to {}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    for r in 0..settings.reps as u64 {
        let data = simulate_dataset(model, settings.n, settings.seed, r)?;
        let stem = dir.join(format!("replicate_{r:05}"));
        let file = std::fs::File::create(stem.with_extension("csv")).map_err(io)?;
        data.write_csv(std::io::BufWriter::new(file))?;
        let result = match hypothesis_test_with(&data, features, &settings.test_options()) {
            Ok(res) => serde_json::to_value(&res).expect("result serializes"),
            Err(e) => json!({ "error": e.to_string() }),
        };
        std::fs::write(stem.with_extension("json"), to_json(&result)?).map_err(io)?;
    }
    Ok(())
}

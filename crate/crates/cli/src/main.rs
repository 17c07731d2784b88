//! `epf`: rolling probabilistic forecasting backtests from the command line.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;
use sha2::{Digest, Sha256};

use epf::arx::ModelSpec;
use epf::backtest::{read_forecasts, run_backtest, write_forecasts, BacktestError, CellError, Transform};
use epf::evaluation::{aggregate_report, EvaluationReport, ReportOptions};
use epf::synth::{generate, SynthSpec};
use epf::timeseries::{load_panel, parse_holidays, write_panel, ColumnSchema};

use config::{dm_variance, BacktestSettings, ConfigFile, DEFAULT_OUT_DIR};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(
    name = "epf",
    version,
    about = "Probabilistic day-ahead electricity price forecasting backtests"
)]
struct Cli {
    /// Only print warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a rolling-window backtest and score it.
    Backtest(BacktestArgs),
    /// Recompute the report from a stored forecasts.csv.
    Evaluate(EvaluateArgs),
    /// Simulate a panel from a known ARX process.
    Synth(SynthArgs),
}

/// Flags override values from `--config`.
#[derive(Debug, Args)]
struct BacktestArgs {
    /// Key-value config file (`key = value`, `#` comments; keys are the flag names).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Hourly panel CSV (timestamp, price and exogenous columns).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Holiday list, one YYYY-MM-DD per line.
    #[arg(long)]
    holidays: Option<PathBuf>,
    /// First validation day.
    #[arg(long)]
    from: Option<NaiveDate>,
    /// Last validation day (inclusive).
    #[arg(long)]
    to: Option<NaiveDate>,
    /// Comma-separated methods: QRA, ERA, Q-hist-1..5, EX-hist-1..5 (expert number), or the groups q-hist, ex-hist, all [default: all].
    #[arg(long)]
    methods: Option<String>,
    /// Price transform: asinh or none [default: asinh].
    #[arg(long)]
    transform: Option<Transform>,
    /// Seed of all Monte Carlo draws [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo scenarios per cell for the inverse transform [default: 10000].
    #[arg(long)]
    scenarios: Option<usize>,
    /// Days in calibration part 1, where the expert models are estimated [default: 365].
    #[arg(long)]
    part1: Option<usize>,
    /// Days in calibration part 2, where the averaging weights are estimated [default: 365].
    #[arg(long)]
    part2: Option<usize>,
    /// Output directory [default: epf-out].
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Worker threads [default: all cores].
    #[arg(long)]
    jobs: Option<usize>,
    /// Significance level of the Kupiec and Diebold-Mariano tests [default: 0.05].
    #[arg(long)]
    sig: Option<f64>,
    /// Use a Newey-West variance with this many lags in the Diebold-Mariano test.
    #[arg(long)]
    dm_lags: Option<usize>,
    /// Add an intercept to the QRA and ERA regressions.
    #[arg(long)]
    intercept: bool,
    /// Recompute part-2 expert forecasts at every step instead of caching them.
    #[arg(long)]
    no_cache: bool,
    /// Largest share of failed cells before the run aborts [default: 0.01].
    #[arg(long)]
    error_budget: Option<f64>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// forecasts.csv written by `epf backtest`.
    #[arg(long)]
    forecasts: PathBuf,
    /// Manifest of the run; supplies the expected days and methods and the
    /// default test settings [default: manifest.json next to the forecasts, if present].
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Significance level [default: from the manifest, else 0.05].
    #[arg(long)]
    sig: Option<f64>,
    /// Newey-West lags for the Diebold-Mariano test [default: from the manifest].
    #[arg(long)]
    dm_lags: Option<usize>,
    #[arg(long, default_value = DEFAULT_OUT_DIR)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Generating process: M1, M2 or M3.
    #[arg(long, default_value = "M1")]
    variant: ModelSpec,
    /// Standard deviation of the Gaussian price innovation (0 gives a noiseless, weekly-periodic panel).
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 800)]
    days: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// First emitted day.
    #[arg(long, default_value = "2017-01-01")]
    start: NaiveDate,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth JSON [default: <out>.truth.json].
    #[arg(long)]
    truth: Option<PathBuf>,
}

/// Error with the process exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn invalid(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 1,
            error: error.into(),
        }
    }

    fn abort(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 2,
            error: error.into(),
        }
    }
}

trait OrFail<T> {
    fn invalid(self) -> Result<T, Failure>;
    fn abort(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> OrFail<T> for Result<T, E> {
    fn invalid(self) -> Result<T, Failure> {
        self.map_err(Failure::invalid)
    }
    fn abort(self) -> Result<T, Failure> {
        self.map_err(Failure::abort)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let outcome = match &cli.command {
        Command::Backtest(args) => cmd_backtest(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Synth(args) => cmd_synth(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct FileDigest {
    path: String,
    bytes: usize,
    sha256: String,
}

impl FileDigest {
    fn of(path: &Path, contents: &[u8]) -> Self {
        Self {
            path: path.display().to_string(),
            bytes: contents.len(),
            sha256: hex::encode(Sha256::digest(contents)),
        }
    }
}

#[derive(Debug, Default, Serialize)]
struct Timings {
    load_secs: f64,
    forecast_secs: f64,
    write_secs: f64,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    status: &'static str,
    config: &'a BacktestSettings,
    seed: u64,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    timings: Timings,
    cells: usize,
    failed_cells: usize,
    cell_errors: &'a [CellError],
    ingest_warnings: &'a [String],
}

/// Writes through a sibling temporary file so readers never see a partial file.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

fn read_input(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn report_files(report: &EvaluationReport) -> Result<(Vec<u8>, Vec<u8>)> {
    let mut json = serde_json::to_vec_pretty(&report.to_json())?;
    json.push(b'\n');
    Ok((report.to_csv().into_bytes(), json))
}

fn run_with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build()?;
            Ok(pool.install(f))
        }
    }
}

fn cmd_backtest(args: &BacktestArgs) -> Result<(), Failure> {
    let started = Instant::now();
    let file = match &args.config {
        Some(path) => ConfigFile::load(path).invalid()?,
        None => ConfigFile::default(),
    };
    let settings = BacktestSettings::resolve(args, &file).invalid()?;
    let cfg = settings.backtest_config().invalid()?;

    let data_bytes = read_input(&settings.data).invalid()?;
    let mut inputs = vec![FileDigest::of(&settings.data, &data_bytes)];
    let holidays = match &settings.holidays {
        Some(path) => {
            let bytes = read_input(path).invalid()?;
            inputs.push(FileDigest::of(path, &bytes));
            parse_holidays(bytes.as_slice())
                .with_context(|| format!("in {}", path.display()))
                .invalid()?
        }
        None => Default::default(),
    };
    let ingested = load_panel(data_bytes.as_slice(), &ColumnSchema::default(), &holidays)
        .with_context(|| format!("loading {}", settings.data.display()))
        .invalid()?;
    for w in &ingested.warnings {
        warn!("{w}");
    }
    let panel = ingested.panel;
    info!(
        "loaded {} days ({} to {})",
        panel.len(),
        panel.first_date(),
        panel.last_date()
    );
    let mut timings = Timings {
        load_secs: started.elapsed().as_secs_f64(),
        ..Default::default()
    };

    std::fs::create_dir_all(&settings.out_dir)
        .with_context(|| format!("creating {}", settings.out_dir.display()))
        .invalid()?;
    let forecast_started = Instant::now();
    let result = run_with_jobs(settings.jobs, || run_backtest(&panel, &cfg)).invalid()?;
    timings.forecast_secs = forecast_started.elapsed().as_secs_f64();

    let manifest_path = settings.out_dir.join("manifest.json");
    let write_manifest = |status, outputs, timings, cells, errors: &[CellError]| -> Result<()> {
        let manifest = Manifest {
            tool: "epf",
            version: VERSION,
            status,
            config: &settings,
            seed: settings.seed,
            inputs: inputs.clone(),
            outputs,
            timings,
            cells,
            failed_cells: errors.len(),
            cell_errors: errors,
            ingest_warnings: &ingested.warnings,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        write_atomic(&manifest_path, &bytes)
    };

    let output = match result {
        Ok(output) => output,
        Err(BacktestError::ErrorBudget { errored, total, errors }) => {
            write_manifest("aborted", Vec::new(), timings, total, &errors).abort()?;
            return Err(Failure::abort(anyhow!(
                "{errored} of {total} cells failed, above the error budget of {}; see {}",
                settings.error_budget,
                manifest_path.display()
            )));
        }
        Err(e @ (BacktestError::Config(_) | BacktestError::Infeasible(_))) => return Err(Failure::invalid(e)),
        Err(e) => return Err(Failure::abort(e)),
    };

    let write_started = Instant::now();
    let mut forecasts = Vec::new();
    write_forecasts(
        &mut forecasts,
        &settings.methods,
        &output.records,
        &output.errors,
        |date, hour| panel.index_of(date).map(|d| panel.prices()[d][hour]),
    )
    .abort()?;
    let (report_csv, report_json) = report_files(&output.report).abort()?;
    let mut outputs = Vec::new();
    for (name, bytes) in [
        ("forecasts.csv", &forecasts),
        ("report.csv", &report_csv),
        ("report.json", &report_json),
    ] {
        let path = settings.out_dir.join(name);
        write_atomic(&path, bytes).abort()?;
        outputs.push(FileDigest::of(&path, bytes));
    }
    timings.write_secs = write_started.elapsed().as_secs_f64();
    write_manifest("ok", outputs, timings, output.cells, &output.errors).abort()?;
    info!(
        "{} forecasts, {} failed cells, written to {}",
        output.records.len(),
        output.errors.len(),
        settings.out_dir.display()
    );
    Ok(())
}

/// The parts of a run manifest that `evaluate` reuses.
#[derive(Debug, serde::Deserialize)]
struct ManifestConfig {
    from: NaiveDate,
    to: NaiveDate,
    methods: Vec<String>,
    sig: f64,
    dm_lags: Option<usize>,
}

#[derive(Debug, serde::Deserialize)]
struct StoredManifest {
    config: ManifestConfig,
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<(), Failure> {
    let bytes = read_input(&args.forecasts).invalid()?;
    let mut stored = read_forecasts(bytes.as_slice())
        .with_context(|| format!("in {}", args.forecasts.display()))
        .invalid()?;

    let manifest_path = args.manifest.clone().or_else(|| {
        let sibling = args.forecasts.with_file_name("manifest.json");
        sibling.exists().then_some(sibling)
    });
    let manifest = match &manifest_path {
        Some(path) => {
            let text = read_input(path).invalid()?;
            let m: StoredManifest = serde_json::from_slice(&text)
                .with_context(|| format!("reading manifest {}", path.display()))
                .invalid()?;
            Some(m.config)
        }
        None => None,
    };
    if let Some(m) = &manifest {
        // expected cells come from the run, not from whatever rows survived
        let days = (m.to - m.from).num_days() + 1;
        stored.dates = m.from.iter_days().take(days.max(0) as usize).collect();
        stored.methods = m.methods.clone();
    }
    let options = ReportOptions {
        sig: args.sig.or(manifest.as_ref().map(|m| m.sig)).unwrap_or(0.05),
        dm_variance: dm_variance(args.dm_lags.or(manifest.as_ref().and_then(|m| m.dm_lags))),
    };
    if !(options.sig > 0.0 && options.sig < 1.0) {
        return Err(Failure::invalid(anyhow!("--sig {} is outside (0, 1)", options.sig)));
    }
    let table = stored.table().invalid()?;
    let report = aggregate_report(&table, options).invalid()?;
    let (report_csv, report_json) = report_files(&report).abort()?;
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))
        .abort()?;
    write_atomic(&args.out_dir.join("report.csv"), &report_csv).abort()?;
    write_atomic(&args.out_dir.join("report.json"), &report_json).abort()?;
    info!(
        "scored {} methods over {} days; report in {}",
        report.methods.len(),
        report.days,
        args.out_dir.display()
    );
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<(), Failure> {
    let spec = SynthSpec {
        variant: args.variant,
        noise: args.noise,
        days: args.days,
        seed: args.seed,
        start: args.start,
    };
    let out = generate(&spec).invalid()?;
    let mut csv = Vec::new();
    write_panel(&out.panel, &mut csv, &ColumnSchema::default()).abort()?;
    let truth_path = args.truth.clone().unwrap_or_else(|| {
        let mut name = args.out.file_stem().unwrap_or_default().to_owned();
        name.push(".truth.json");
        args.out.with_file_name(name)
    });
    let mut truth = serde_json::to_vec_pretty(&out.truth).abort()?;
    truth.push(b'\n');
    if let Some(dir) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .abort()?;
    }
    write_atomic(&args.out, &csv).abort()?;
    write_atomic(&truth_path, &truth).abort()?;
    info!(
        "{} days of {} data written to {} (truth in {})",
        args.days,
        args.variant,
        args.out.display(),
        truth_path.display()
    );
    Ok(())
}

//! Rolling-window backtest.
//!
//! Every validation day `T` uses a calibration window of `part1_days +
//! part2_days` days ending the day before `T`. The point forecast for any day
//! `d` comes from the five expert models estimated on the `part1_days` days
//! immediately before `d`, so the part-2 forecasts at step `T` are exactly
//! the out-of-sample forecasts issued on those days. Each of them is computed
//! once and reused by every later step (see [`ForecastCache`]).
//!
//! Per (day, hour) cell the averaging methods are fit on the part-2
//! (forecast, actual) pairs, historical simulation uses the part-2 errors of
//! each expert, expectile outputs are converted to quantiles, and the curves
//! are mapped back to the price scale.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::sync::{Arc, RwLock};

use chrono::{Datelike, Duration, NaiveDate};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::arx::{forecast_models, ArxData, ArxOptions, ModelSpec, MAX_LAG};
use crate::averaging::{fit_era, fit_qra, AveragingOptions, Prediction};
use crate::distribution::{
    expectiles_to_quantiles, historical_sim_expectiles, historical_sim_quantiles, LevelGrid, QuantileCurve,
};
use crate::evaluation::{aggregate_report, EvalError, EvaluationReport, ForecastTable, ReportOptions};
use crate::timeseries::{calendar_dummies, DayRow, DayType, HourlyPanel, WindowSpec, HOURS};
use crate::transform::{
    asinh_transform, invert_distribution, sinh_invert, McConfig, NormalizationStats, DEFAULT_SCENARIOS,
};

/// Smallest calibration part: seven lag days plus one response row.
pub const MIN_PART_DAYS: usize = MAX_LAG + 1;

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("infeasible validation range: {0}")]
    Infeasible(String),
    #[error("{errored} of {total} cells failed, above the error budget; first failure: {}", .errors.first().map(|e| e.to_string()).unwrap_or_default())]
    ErrorBudget {
        errored: usize,
        total: usize,
        errors: Vec<CellError>,
    },
    #[error("malformed forecast file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Evaluation(#[from] EvalError),
}

/// One of the probabilistic forecasting methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Qra,
    Era,
    QHist(ModelSpec),
    ExHist(ModelSpec),
}

impl Method {
    /// QRA, ERA, then historical simulation in quantile and expectile form
    /// for each expert.
    pub fn all() -> Vec<Method> {
        let mut out = vec![Method::Qra, Method::Era];
        out.extend(ModelSpec::ALL.map(Method::QHist));
        out.extend(ModelSpec::ALL.map(Method::ExHist));
        out
    }

    fn code(self) -> u64 {
        match self {
            Method::Qra => 0,
            Method::Era => 1,
            Method::QHist(m) => 2 + m.index() as u64,
            Method::ExHist(m) => 7 + m.index() as u64,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Qra => f.write_str("QRA"),
            Method::Era => f.write_str("ERA"),
            Method::QHist(m) => write!(f, "Q-hist-{}", m.index() + 1),
            Method::ExHist(m) => write!(f, "EX-hist-{}", m.index() + 1),
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        let expert = |rest: &str| -> Result<ModelSpec, String> {
            match rest.parse::<usize>() {
                Ok(i @ 1..=5) => Ok(ModelSpec::ALL[i - 1]),
                _ => Err(format!("unknown method `{s}`")),
            }
        };
        match lower.as_str() {
            "qra" => Ok(Method::Qra),
            "era" => Ok(Method::Era),
            _ => {
                if let Some(rest) = lower.strip_prefix("q-hist-") {
                    Ok(Method::QHist(expert(rest)?))
                } else if let Some(rest) = lower.strip_prefix("ex-hist-") {
                    Ok(Method::ExHist(expert(rest)?))
                } else {
                    Err(format!("unknown method `{s}`"))
                }
            }
        }
    }
}

/// Parses a comma-separated method list. `all`, `q-hist` and `ex-hist`
/// expand to their groups; duplicates are dropped, first occurrence wins.
pub fn parse_methods(list: &str) -> Result<Vec<Method>, String> {
    let mut out: Vec<Method> = Vec::new();
    for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let group: Vec<Method> = match item.to_ascii_lowercase().as_str() {
            "all" => Method::all(),
            "q-hist" => ModelSpec::ALL.map(Method::QHist).to_vec(),
            "ex-hist" => ModelSpec::ALL.map(Method::ExHist).to_vec(),
            _ => vec![item.parse()?],
        };
        for m in group {
            if !out.contains(&m) {
                out.push(m);
            }
        }
    }
    if out.is_empty() {
        return Err("method list is empty".into());
    }
    Ok(out)
}

/// Variance-stabilizing transform applied before modelling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Asinh,
    None,
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Transform::Asinh => "asinh",
            Transform::None => "none",
        })
    }
}

impl FromStr for Transform {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "asinh" => Ok(Transform::Asinh),
            "none" => Ok(Transform::None),
            _ => Err(format!("unknown transform `{s}` (expected asinh or none)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BacktestConfig {
    pub part1_days: usize,
    pub part2_days: usize,
    pub validation_start: NaiveDate,
    pub validation_end: NaiveDate,
    pub methods: Vec<Method>,
    pub transform: Transform,
    /// Output grid of every method (percentiles by default).
    pub quantile_grid: LevelGrid,
    pub expectile_grid: LevelGrid,
    pub mc: McConfig,
    pub arx: ArxOptions,
    pub averaging: AveragingOptions,
    /// Reuse part-2 point forecasts across steps. Disabling recomputes them
    /// at every step, which gives identical results far more slowly.
    pub cache: bool,
    /// Largest tolerated share of failed cells.
    pub error_budget: f64,
    pub report: ReportOptions,
}

impl BacktestConfig {
    /// All methods, asinh transform, default grids and seed 0.
    pub fn new(part1_days: usize, part2_days: usize, validation_start: NaiveDate, validation_end: NaiveDate) -> Self {
        Self {
            part1_days,
            part2_days,
            validation_start,
            validation_end,
            methods: Method::all(),
            transform: Transform::Asinh,
            quantile_grid: LevelGrid::percentiles(),
            expectile_grid: LevelGrid::expectile_default(),
            mc: McConfig::new(DEFAULT_SCENARIOS, 0).expect("positive scenario count"),
            arx: ArxOptions::default(),
            averaging: AveragingOptions::default(),
            cache: true,
            error_budget: 0.01,
            report: ReportOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<(), BacktestError> {
        let fail = |msg: String| Err(BacktestError::Config(msg));
        if self.part1_days < MIN_PART_DAYS || self.part2_days < MIN_PART_DAYS {
            return fail(format!(
                "calibration parts need at least {MIN_PART_DAYS} days each, got {} and {}",
                self.part1_days, self.part2_days
            ));
        }
        if self.validation_start > self.validation_end {
            return fail(format!(
                "validation start {} is after its end {}",
                self.validation_start, self.validation_end
            ));
        }
        if self.methods.is_empty() {
            return fail("no methods selected".into());
        }
        if !(0.0..=1.0).contains(&self.error_budget) {
            return fail(format!("error budget {} is outside [0, 1]", self.error_budget));
        }
        if !(self.report.sig > 0.0 && self.report.sig < 1.0) {
            return fail(format!("significance level {} is outside (0, 1)", self.report.sig));
        }
        Ok(())
    }

    pub fn validation_days(&self) -> usize {
        (self.validation_end - self.validation_start).num_days() as usize + 1
    }

    pub fn method_names(&self) -> Vec<String> {
        self.methods.iter().map(Method::to_string).collect()
    }
}

/// One calibration window per validation day, advancing one day at a time.
pub fn generate_windows(cfg: &BacktestConfig, panel: &HourlyPanel) -> Result<Vec<WindowSpec>, BacktestError> {
    cfg.validate()?;
    let history = (cfg.part1_days + cfg.part2_days + MAX_LAG) as i64;
    let earliest = cfg.validation_start - Duration::days(history);
    if earliest < panel.first_date() {
        return Err(BacktestError::Infeasible(format!(
            "validation from {} needs data from {earliest} (calibration plus {MAX_LAG} lag days), panel starts {}",
            cfg.validation_start,
            panel.first_date()
        )));
    }
    if cfg.validation_end > panel.last_date() {
        return Err(BacktestError::Infeasible(format!(
            "validation ends {} after the panel's last day {}",
            cfg.validation_end,
            panel.last_date()
        )));
    }
    (0..cfg.validation_days())
        .map(|i| {
            let target = cfg.validation_start + Duration::days(i as i64);
            WindowSpec::ending_before(target, cfg.part1_days, cfg.part2_days)
                .map_err(|e| BacktestError::Config(e.to_string()))
        })
        .collect()
}

/// Probabilistic forecast for one cell, on the price scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRecord {
    pub date: NaiveDate,
    pub hour: usize,
    pub method: String,
    pub curve: QuantileCurve,
    pub actual: f64,
}

/// A (day, hour, method) cell that could not be forecast.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellError {
    pub date: NaiveDate,
    pub hour: usize,
    pub method: String,
    pub message: String,
}

impl fmt::Display for CellError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} hour {} {}: {}", self.date, self.hour, self.method, self.message)
    }
}

#[derive(Debug, Clone)]
pub struct BacktestOutput {
    pub records: Vec<ForecastRecord>,
    pub errors: Vec<CellError>,
    pub report: EvaluationReport,
    /// Validation days times hours times methods.
    pub cells: usize,
}

type PoolEntry = Result<[f64; 5], String>;

/// Point forecasts of the five experts for every hour of one day.
pub type DayForecasts = Arc<Vec<PoolEntry>>;

/// Expert point forecasts on the price scale, keyed by
/// `(estimation start, forecast day)` as panel indices.
///
/// Entries are deterministic functions of their key, so concurrent inserts
/// of the same key are harmless.
#[derive(Debug, Default)]
pub struct ForecastCache {
    entries: RwLock<HashMap<(usize, usize), DayForecasts>>,
}

impl ForecastCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: (usize, usize)) -> Option<DayForecasts> {
        self.entries.read().expect("cache lock").get(&key).cloned()
    }

    pub fn get_or_insert_with(&self, key: (usize, usize), compute: impl FnOnce() -> Vec<PoolEntry>) -> DayForecasts {
        if let Some(hit) = self.get(key) {
            return hit;
        }
        let value = Arc::new(compute());
        self.entries
            .write()
            .expect("cache lock")
            .insert(key, Arc::clone(&value));
        value
    }
}

struct Context<'a> {
    panel: &'a HourlyPanel,
    day_types: Vec<DayType>,
    cfg: &'a BacktestConfig,
}

impl Context<'_> {
    /// Expert forecasts for `day` (a panel index) estimated on the
    /// `part1_days` days before it, for the given hours.
    fn expert_forecasts(&self, day: usize, hours: &[usize]) -> Vec<PoolEntry> {
        let p1 = self.cfg.part1_days;
        let lo = day - p1 - MAX_LAG;
        let range = lo..day + 1;
        let prices = &self.panel.prices()[range.clone()];
        let exogenous: Vec<&[DayRow]> = self
            .panel
            .exogenous()
            .iter()
            .map(|e| &e.values[range.clone()])
            .collect();
        let types = &self.day_types[range];
        let estimation = MAX_LAG..MAX_LAG + p1;
        let target = MAX_LAG + p1;

        let forecast = |data: &ArxData<'_>, h: usize| {
            forecast_models(data, h, estimation.clone(), target, self.cfg.arx).map_err(|e| e.to_string())
        };
        match self.cfg.transform {
            Transform::None => match ArxData::new(prices, exogenous, types) {
                Ok(data) => hours.iter().map(|&h| forecast(&data, h)).collect(),
                Err(e) => vec![Err(e.to_string()); hours.len()],
            },
            Transform::Asinh => {
                let stats: Result<Vec<NormalizationStats>, String> = (0..HOURS)
                    .map(|h| {
                        let sample: Vec<f64> = prices[estimation.clone()].iter().map(|r| r[h]).collect();
                        NormalizationStats::from_sample(&sample).map_err(|e| format!("hour {h}: {e}"))
                    })
                    .collect();
                let stats = match stats {
                    Ok(s) => s,
                    Err(e) => return vec![Err(e); hours.len()],
                };
                let working: Vec<DayRow> = prices
                    .iter()
                    .map(|row| std::array::from_fn(|h| asinh_transform(row[h], &stats[h])))
                    .collect();
                match ArxData::new(&working, exogenous, types) {
                    Ok(data) => hours
                        .iter()
                        .map(|&h| forecast(&data, h).map(|f| f.map(|v| sinh_invert(v, &stats[h]))))
                        .collect(),
                    Err(e) => vec![Err(e.to_string()); hours.len()],
                }
            }
        }
    }

    fn cached_day(&self, cache: &ForecastCache, day: usize) -> DayForecasts {
        let all: Vec<usize> = (0..HOURS).collect();
        cache.get_or_insert_with((day - self.cfg.part1_days, day), || self.expert_forecasts(day, &all))
    }

    /// Part-2 pool plus target row for one cell, on the price scale.
    fn pool(&self, cache: Option<&ForecastCache>, t: usize, hour: usize) -> Result<Vec<[f64; 5]>, String> {
        let days = t - self.cfg.part2_days..=t;
        let date = |d: usize| self.panel.dates()[d];
        match cache {
            Some(cache) => days
                .map(|d| {
                    self.cached_day(cache, d)[hour]
                        .clone()
                        .map_err(|e| format!("expert forecast for {} unavailable: {e}", date(d)))
                })
                .collect(),
            None => days
                .map(|d| {
                    self.expert_forecasts(d, &[hour])
                        .pop()
                        .expect("one hour requested")
                        .map_err(|e| format!("expert forecast for {} unavailable: {e}", date(d)))
                })
                .collect(),
        }
    }

    fn cell(&self, cache: Option<&ForecastCache>, t: usize, hour: usize) -> Vec<Result<QuantileCurve, String>> {
        let n_methods = self.cfg.methods.len();
        let pool = match self.pool(cache, t, hour) {
            Ok(p) => p,
            Err(e) => return vec![Err(e); n_methods],
        };
        let cfg = self.cfg;
        let calibration = t - cfg.part1_days - cfg.part2_days..t;
        let stats = match cfg.transform {
            Transform::None => NormalizationStats::identity(),
            Transform::Asinh => {
                let sample: Vec<f64> = self.panel.prices()[calibration].iter().map(|r| r[hour]).collect();
                match NormalizationStats::from_sample(&sample) {
                    Ok(s) => s,
                    Err(e) => return vec![Err(format!("normalization: {e}")); n_methods],
                }
            }
        };
        let work = |p: f64| match cfg.transform {
            Transform::None => p,
            Transform::Asinh => asinh_transform(p, &stats),
        };
        let (target_row, part2) = pool.split_last().expect("pool includes the target row");
        let rows: Vec<[f64; 5]> = part2.iter().map(|r| r.map(work)).collect();
        let target = target_row.map(work);
        let actuals: Vec<f64> = self.panel.prices()[t - cfg.part2_days..t]
            .iter()
            .map(|r| work(r[hour]))
            .collect();
        let errors = |m: ModelSpec| -> Vec<f64> { rows.iter().zip(&actuals).map(|(r, y)| r[m.index()] - y).collect() };
        let grid = &cfg.quantile_grid;
        let date = self.panel.dates()[t];

        cfg.methods
            .iter()
            .map(|&method| {
                let curve = match method {
                    Method::Qra => fit_qra(&rows, &actuals, grid, cfg.averaging)
                        .and_then(|fit| fit.predict(&target))
                        .map_err(|e| e.to_string())
                        .and_then(|p| match p {
                            Prediction::Quantiles(q) => Ok(q),
                            Prediction::Expectiles(_) => Err("unexpected expectile prediction".to_string()),
                        }),
                    Method::Era => fit_era(&rows, &actuals, &cfg.expectile_grid, cfg.averaging)
                        .and_then(|fit| fit.predict(&target))
                        .map_err(|e| e.to_string())
                        .and_then(|p| match p {
                            Prediction::Expectiles(e) => expectiles_to_quantiles(&e, grid).map_err(|e| e.to_string()),
                            Prediction::Quantiles(_) => Err("unexpected quantile prediction".to_string()),
                        }),
                    Method::QHist(m) => {
                        historical_sim_quantiles(target[m.index()], &errors(m), grid).map_err(|e| e.to_string())
                    }
                    Method::ExHist(m) => historical_sim_expectiles(target[m.index()], &errors(m), &cfg.expectile_grid)
                        .and_then(|e| expectiles_to_quantiles(&e, grid))
                        .map_err(|e| e.to_string()),
                }?;
                match cfg.transform {
                    Transform::None => Ok(curve),
                    Transform::Asinh => {
                        let mc = cfg
                            .mc
                            .derive(&[date.num_days_from_ce() as u64, hour as u64, method.code()]);
                        invert_distribution(&curve, &stats, &mc, grid).map_err(|e| format!("inversion: {e}"))
                    }
                }
            })
            .collect()
    }
}

/// Runs the rolling backtest and scores it.
pub fn run_backtest(panel: &HourlyPanel, cfg: &BacktestConfig) -> Result<BacktestOutput, BacktestError> {
    let windows = generate_windows(cfg, panel)?;
    let first = panel
        .index_of(cfg.validation_start)
        .expect("validation start checked against the panel");
    let ctx = Context {
        panel,
        day_types: calendar_dummies(panel).types,
        cfg,
    };
    let targets: Vec<usize> = (first..first + windows.len()).collect();

    let cache = cfg.cache.then(ForecastCache::new);
    if let Some(cache) = &cache {
        let days: Vec<usize> = (first - cfg.part2_days..first + windows.len()).collect();
        info!("computing expert forecasts for {} days", days.len());
        days.par_iter().for_each(|&d| {
            ctx.cached_day(cache, d);
        });
    }

    info!(
        "forecasting {} days x {HOURS} hours x {} methods",
        targets.len(),
        cfg.methods.len()
    );
    let cells: Vec<(usize, usize)> = targets.iter().flat_map(|&t| (0..HOURS).map(move |h| (t, h))).collect();
    let outcomes: Vec<Vec<Result<QuantileCurve, String>>> =
        cells.par_iter().map(|&(t, h)| ctx.cell(cache.as_ref(), t, h)).collect();

    let names = cfg.method_names();
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (&(t, hour), results) in cells.iter().zip(outcomes) {
        let date = panel.dates()[t];
        let actual = panel.prices()[t][hour];
        for (name, result) in names.iter().zip(results) {
            match result {
                Ok(curve) => records.push(ForecastRecord {
                    date,
                    hour,
                    method: name.clone(),
                    curve,
                    actual,
                }),
                Err(message) => {
                    warn!("{date} hour {hour} {name}: {message}");
                    errors.push(CellError {
                        date,
                        hour,
                        method: name.clone(),
                        message,
                    });
                }
            }
        }
    }
    let total = cells.len() * names.len();
    if errors.len() as f64 > cfg.error_budget * total as f64 {
        return Err(BacktestError::ErrorBudget {
            errored: errors.len(),
            total,
            errors,
        });
    }
    let dates = windows.iter().map(|w| w.target_day).collect();
    let table = forecast_table(names, dates, cfg.quantile_grid.clone(), &records, &errors)?;
    let report = aggregate_report(&table, cfg.report)?;
    Ok(BacktestOutput {
        records,
        errors,
        report,
        cells: total,
    })
}

/// Scoring table from stored records. Cells with any failed method are
/// excluded for all methods so that every method is scored on the same cells.
pub fn forecast_table(
    methods: Vec<String>,
    dates: Vec<NaiveDate>,
    grid: LevelGrid,
    records: &[ForecastRecord],
    errors: &[CellError],
) -> Result<ForecastTable, BacktestError> {
    let day_index: HashMap<NaiveDate, usize> = dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let lookup = |date: NaiveDate| {
        day_index
            .get(&date)
            .copied()
            .ok_or_else(|| BacktestError::Malformed(format!("date {date} outside the table")))
    };
    let mut table = ForecastTable::new(methods, dates, grid);
    for r in records {
        let d = lookup(r.date)?;
        let m = table.method_index(&r.method)?;
        table.insert(m, d, r.hour, r.curve.values().to_vec());
        table.set_actual(d, r.hour, r.actual);
    }
    for e in errors {
        table.exclude(lookup(e.date)?, e.hour);
    }
    Ok(table)
}

const ERROR_LEVEL: &str = "ERROR";

/// Writes records and failures in long format
/// (`date,hour,method,level,value,actual`), one row per curve level and one
/// `ERROR` row per failed cell, ordered by date, hour and `methods`.
pub fn write_forecasts<W: Write>(
    writer: W,
    methods: &[String],
    records: &[ForecastRecord],
    errors: &[CellError],
    actual_of: impl Fn(NaiveDate, usize) -> Option<f64>,
) -> Result<(), BacktestError> {
    enum Row<'a> {
        Curve(&'a ForecastRecord),
        Failed(&'a CellError),
    }
    let rank = |name: &str| methods.iter().position(|m| m == name).unwrap_or(usize::MAX);
    let mut rows: Vec<(NaiveDate, usize, usize, Row<'_>)> = records
        .iter()
        .map(|r| (r.date, r.hour, rank(&r.method), Row::Curve(r)))
        .chain(errors.iter().map(|e| (e.date, e.hour, rank(&e.method), Row::Failed(e))))
        .collect();
    rows.sort_by_key(|(date, hour, m, _)| (*date, *hour, *m));

    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["date", "hour", "method", "level", "value", "actual"])?;
    for (_, _, _, row) in rows {
        match row {
            Row::Curve(r) => {
                let (date, hour, actual) = (r.date.to_string(), r.hour.to_string(), r.actual.to_string());
                for (level, value) in r.curve.levels().iter().zip(r.curve.values()) {
                    w.write_record([
                        date.as_str(),
                        hour.as_str(),
                        r.method.as_str(),
                        &level.to_string(),
                        &value.to_string(),
                        actual.as_str(),
                    ])?;
                }
            }
            Row::Failed(e) => {
                let actual = actual_of(e.date, e.hour).map(|a| a.to_string()).unwrap_or_default();
                w.write_record([
                    e.date.to_string().as_str(),
                    &e.hour.to_string(),
                    &e.method,
                    ERROR_LEVEL,
                    &e.message,
                    &actual,
                ])?;
            }
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Contents of a forecast file.
#[derive(Debug, Clone)]
pub struct StoredForecasts {
    /// Methods in order of first appearance.
    pub methods: Vec<String>,
    /// Distinct dates, ascending.
    pub dates: Vec<NaiveDate>,
    pub grid: LevelGrid,
    pub records: Vec<ForecastRecord>,
    pub errors: Vec<CellError>,
}

impl StoredForecasts {
    pub fn table(&self) -> Result<ForecastTable, BacktestError> {
        forecast_table(
            self.methods.clone(),
            self.dates.clone(),
            self.grid.clone(),
            &self.records,
            &self.errors,
        )
    }
}

/// Reads a file written by [`write_forecasts`].
pub fn read_forecasts<R: Read>(reader: R) -> Result<StoredForecasts, BacktestError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["date", "hour", "method", "level", "value", "actual"];
    if headers.iter().map(str::trim).ne(expected) {
        return Err(BacktestError::Malformed(format!(
            "header must be {}, found {}",
            expected.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }

    struct Partial {
        date: NaiveDate,
        hour: usize,
        method: String,
        levels: Vec<f64>,
        values: Vec<f64>,
        actual: f64,
    }
    let mut methods: Vec<String> = Vec::new();
    let mut dates: Vec<NaiveDate> = Vec::new();
    let mut partials: Vec<Partial> = Vec::new();
    let mut errors = Vec::new();
    let mut open: HashMap<(NaiveDate, usize, String), usize> = HashMap::new();

    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let bad = |what: &str| BacktestError::Malformed(format!("line {line}: {what}"));
        let field = |k: usize| row.get(k).map(str::trim).unwrap_or("");
        let date = NaiveDate::parse_from_str(field(0), "%Y-%m-%d").map_err(|_| bad("bad date"))?;
        let hour: usize = field(1).parse().map_err(|_| bad("bad hour"))?;
        if hour >= HOURS {
            return Err(bad("hour outside 0..24"));
        }
        let method = field(2).to_string();
        if method.is_empty() {
            return Err(bad("empty method"));
        }
        if !methods.contains(&method) {
            methods.push(method.clone());
        }
        dates.push(date);
        if field(3) == ERROR_LEVEL {
            errors.push(CellError {
                date,
                hour,
                method,
                message: row.get(4).unwrap_or("").to_string(),
            });
            continue;
        }
        let number = |k: usize, what: &str| -> Result<f64, BacktestError> {
            field(k)
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(what))
        };
        let level = number(3, "bad level")?;
        let value = number(4, "bad value")?;
        let actual = number(5, "bad actual")?;
        let key = (date, hour, method.clone());
        let idx = *open.entry(key).or_insert_with(|| {
            partials.push(Partial {
                date,
                hour,
                method,
                levels: Vec::new(),
                values: Vec::new(),
                actual,
            });
            partials.len() - 1
        });
        let p = &mut partials[idx];
        if p.actual != actual {
            return Err(bad("actual differs within one cell"));
        }
        p.levels.push(level);
        p.values.push(value);
    }
    let first = partials
        .first()
        .ok_or_else(|| BacktestError::Malformed("no forecast rows".into()))?;
    let grid = LevelGrid::new(first.levels.clone()).map_err(|e| BacktestError::Malformed(e.to_string()))?;
    let records = partials
        .into_iter()
        .map(|p| {
            if p.levels.as_slice() != grid.levels() {
                return Err(BacktestError::Malformed(format!(
                    "{} hour {} {}: levels differ from the first cell's grid",
                    p.date, p.hour, p.method
                )));
            }
            let curve = QuantileCurve::new(grid.clone(), p.values)
                .map_err(|e| BacktestError::Malformed(format!("{} hour {} {}: {e}", p.date, p.hour, p.method)))?;
            Ok(ForecastRecord {
                date: p.date,
                hour: p.hour,
                method: p.method,
                curve,
                actual: p.actual,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    dates.sort();
    dates.dedup();
    Ok(StoredForecasts {
        methods,
        dates,
        grid,
        records,
        errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthSpec};

    fn panel(noise: f64, days: usize) -> HourlyPanel {
        generate(&SynthSpec {
            variant: ModelSpec::M1,
            noise,
            days,
            seed: 11,
            start: NaiveDate::from_ymd_opt(2018, 1, 1).unwrap(),
        })
        .unwrap()
        .panel
    }

    fn small_config(panel: &HourlyPanel, days: i64) -> BacktestConfig {
        let start = panel.first_date() + Duration::days(7 + 40 + 30);
        let mut cfg = BacktestConfig::new(40, 30, start, start + Duration::days(days - 1));
        cfg.mc = McConfig::new(2000, 3).unwrap();
        cfg
    }

    #[test]
    fn method_names_round_trip() {
        let all = Method::all();
        assert_eq!(all.len(), 12);
        for m in &all {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), *m);
        }
        assert_eq!(parse_methods("era, q-hist").unwrap().len(), 6);
        assert_eq!(parse_methods("all,qra").unwrap(), all);
        assert!(parse_methods("q-hist-6").is_err());
        assert!(parse_methods(" , ").is_err());
    }

    #[test]
    fn windows_advance_one_day() {
        let p = panel(1.0, 200);
        let cfg = small_config(&p, 10);
        let w = generate_windows(&cfg, &p).unwrap();
        assert_eq!(w.len(), 10);
        assert_eq!(w[0].calibration_start - Duration::days(7), p.first_date());
        for pair in w.windows(2) {
            assert_eq!(pair[0].shifted(1), pair[1]);
        }
        assert!(w.iter().all(|s| s.part1_days() == 40 && s.part2_days() == 30));
    }

    #[test]
    fn infeasible_ranges_are_rejected() {
        let p = panel(1.0, 120);
        let mut cfg = small_config(&p, 5);
        cfg.validation_start -= Duration::days(1);
        assert!(matches!(generate_windows(&cfg, &p), Err(BacktestError::Infeasible(_))));
        let mut cfg = small_config(&p, 5);
        cfg.validation_end = p.last_date() + Duration::days(1);
        assert!(matches!(generate_windows(&cfg, &p), Err(BacktestError::Infeasible(_))));
        let mut cfg = small_config(&p, 5);
        cfg.part1_days = 7;
        assert!(matches!(cfg.validate(), Err(BacktestError::Config(_))));
    }

    #[test]
    fn one_day_era_gives_24_records() {
        let p = panel(1.0, 120);
        let mut cfg = small_config(&p, 1);
        cfg.methods = vec![Method::Era];
        let out = run_backtest(&p, &cfg).unwrap();
        assert_eq!(out.records.len(), 24);
        assert_eq!(out.cells, 24);
        assert!(out.records.iter().all(|r| r.curve.is_monotone()));
    }

    #[test]
    fn cached_and_naive_paths_agree() {
        let p = panel(2.0, 130);
        let mut cfg = small_config(&p, 3);
        cfg.methods = parse_methods("qra,era,q-hist-4,ex-hist-5").unwrap();
        let cached = run_backtest(&p, &cfg).unwrap();
        cfg.cache = false;
        let naive = run_backtest(&p, &cfg).unwrap();
        assert_eq!(cached.records.len(), naive.records.len());
        for (a, b) in cached.records.iter().zip(&naive.records) {
            for (x, y) in a.curve.values().iter().zip(b.curve.values()) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn forecast_file_round_trip_reproduces_report() {
        let p = panel(2.0, 120);
        let mut cfg = small_config(&p, 2);
        cfg.methods = parse_methods("qra,q-hist-1").unwrap();
        let out = run_backtest(&p, &cfg).unwrap();
        let mut buf = Vec::new();
        let errors = vec![CellError {
            date: cfg.validation_start,
            hour: 5,
            method: "QRA".into(),
            message: "solver failed, badly".into(),
        }];
        write_forecasts(&mut buf, &cfg.method_names(), &out.records, &errors, |_, _| Some(1.5)).unwrap();
        let stored = read_forecasts(buf.as_slice()).unwrap();
        assert_eq!(stored.methods, cfg.method_names());
        assert_eq!(stored.records, out.records);
        assert_eq!(stored.errors, errors);
        assert_eq!(stored.table().unwrap().excluded_cells(), 1);
    }

    #[test]
    fn truncated_file_is_reported_incomplete() {
        let p = panel(2.0, 120);
        let mut cfg = small_config(&p, 1);
        cfg.methods = vec![Method::QHist(ModelSpec::M2)];
        cfg.transform = Transform::None;
        let out = run_backtest(&p, &cfg).unwrap();
        let mut buf = Vec::new();
        write_forecasts(&mut buf, &cfg.method_names(), &out.records[1..], &[], |_, _| None).unwrap();
        let stored = read_forecasts(buf.as_slice()).unwrap();
        let err = aggregate_report(&stored.table().unwrap(), ReportOptions::default()).unwrap_err();
        assert!(err.to_string().contains("hour 0"), "{err}");
    }

    #[test]
    fn malformed_files_are_rejected() {
        assert!(read_forecasts("a,b\n1,2\n".as_bytes()).is_err());
        let bad_hour = "date,hour,method,level,value,actual\n2019-01-01,24,QRA,0.5,1,1\n";
        assert!(read_forecasts(bad_hour.as_bytes()).is_err());
        let empty = "date,hour,method,level,value,actual\n";
        assert!(read_forecasts(empty.as_bytes()).is_err());
    }
}

//! Scoring and testing of quantile forecasts: pinball loss, empirical
//! coverage with the Kupiec unconditional-coverage test, one-sided
//! Diebold-Mariano comparisons, and the aggregated report.

use std::fmt::Write as _;

use chrono::NaiveDate;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use thiserror::Error;

use crate::distribution::{LevelGrid, QuantileCurve};
use crate::timeseries::HOURS;

/// Shortest loss series accepted by the Diebold-Mariano test.
pub const DM_MIN_LENGTH: usize = 30;
/// Levels whose coverage is reported and Kupiec-tested.
pub const COVERAGE_LEVELS: [f64; 2] = [0.05, 0.95];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("level {0} is outside (0, 1)")]
    LevelOutOfRange(f64),
    #[error("level {0} is not on the curve grid")]
    MissingLevel(f64),
    #[error("no observations")]
    Empty,
    #[error("{hits} hits out of {n} days")]
    HitsExceedDays { hits: usize, n: usize },
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("loss series of length {0} is shorter than {DM_MIN_LENGTH}")]
    TooShort(usize),
    #[error("{} forecast cells missing, e.g. {}", .0.len(), .0.first().map(String::as_str).unwrap_or(""))]
    Incomplete(Vec<String>),
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
}

/// Pinball (quantile) loss of `q_hat` for the realized `actual`.
pub fn pinball(q_hat: f64, actual: f64, alpha: f64) -> f64 {
    if actual < q_hat {
        (1.0 - alpha) * (q_hat - actual)
    } else {
        alpha * (actual - q_hat)
    }
}

/// Fraction of days on which the actual lies strictly below the curve's
/// `alpha`-quantile.
pub fn coverage(curves: &[QuantileCurve], actuals: &[f64], alpha: f64) -> Result<f64, EvalError> {
    if curves.len() != actuals.len() {
        return Err(EvalError::LengthMismatch(curves.len(), actuals.len()));
    }
    if curves.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut hits = 0usize;
    for (c, &a) in curves.iter().zip(actuals) {
        let q = c.value_at(alpha).map_err(|_| EvalError::MissingLevel(alpha))?;
        if a < q {
            hits += 1;
        }
    }
    Ok(hits as f64 / curves.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KupiecResult {
    pub hits: usize,
    pub n: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
}

/// `c ln v` with the convention `0 ln 0 = 0`.
fn xlogy(c: f64, v: f64) -> f64 {
    if c == 0.0 {
        0.0
    } else {
        c * v.ln()
    }
}

/// Kupiec likelihood-ratio test of `hits` exceedances in `n` days against
/// the nominal rate `alpha`, chi-square(1) under the null.
pub fn kupiec_test(hits: usize, n: usize, alpha: f64, sig: f64) -> Result<KupiecResult, EvalError> {
    if n == 0 {
        return Err(EvalError::Empty);
    }
    if hits > n {
        return Err(EvalError::HitsExceedDays { hits, n });
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(EvalError::LevelOutOfRange(alpha));
    }
    let (x, m) = (hits as f64, (n - hits) as f64);
    let p = x / n as f64;
    let null = xlogy(m, 1.0 - alpha) + xlogy(x, alpha);
    let alt = xlogy(m, 1.0 - p) + xlogy(x, p);
    let statistic = (2.0 * (alt - null)).max(0.0);
    let chi2 = ChiSquared::new(1.0).expect("one degree of freedom");
    let p_value = chi2.sf(statistic);
    Ok(KupiecResult {
        hits,
        n,
        statistic,
        p_value,
        reject: p_value < sig,
    })
}

/// Long-run variance estimator for the loss differential.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DmVariance {
    /// Sample variance, treating daily differentials as uncorrelated.
    #[default]
    Sample,
    /// Bartlett-kernel (Newey-West) estimator with the given lag count.
    NeweyWest(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DmResult {
    pub statistic: f64,
    pub p_value: f64,
    /// `a` has significantly lower loss than `b`.
    pub a_beats_b: bool,
    /// The differential has zero variance.
    pub degenerate: bool,
}

/// One-sided Diebold-Mariano test of `H0: E[loss_a - loss_b] >= 0`.
pub fn dm_test(loss_a: &[f64], loss_b: &[f64], sig: f64) -> Result<DmResult, EvalError> {
    dm_test_with(loss_a, loss_b, sig, DmVariance::Sample)
}

pub fn dm_test_with(loss_a: &[f64], loss_b: &[f64], sig: f64, variance: DmVariance) -> Result<DmResult, EvalError> {
    if loss_a.len() != loss_b.len() {
        return Err(EvalError::LengthMismatch(loss_a.len(), loss_b.len()));
    }
    let t = loss_a.len();
    if t < DM_MIN_LENGTH {
        return Err(EvalError::TooShort(t));
    }
    let d: Vec<f64> = loss_a.iter().zip(loss_b).map(|(a, b)| a - b).collect();
    let mean = d.iter().sum::<f64>() / t as f64;
    let var = match variance {
        DmVariance::Sample => d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (t - 1) as f64,
        DmVariance::NeweyWest(lags) => {
            let gamma = |l: usize| d[l..].iter().zip(&d).map(|(a, b)| (a - mean) * (b - mean)).sum::<f64>() / t as f64;
            let mut v = gamma(0);
            for l in 1..=lags.min(t - 1) {
                v += 2.0 * (1.0 - l as f64 / (lags + 1) as f64) * gamma(l);
            }
            v.max(0.0)
        }
    };
    let scale = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if var <= (1e-14 * scale).powi(2) || var == 0.0 {
        let (statistic, p_value) = if mean < 0.0 {
            (f64::NEG_INFINITY, 0.0)
        } else if mean > 0.0 {
            (f64::INFINITY, 1.0)
        } else {
            (0.0, 0.5)
        };
        return Ok(DmResult {
            statistic,
            p_value,
            a_beats_b: mean < 0.0 && p_value < sig,
            degenerate: mean != 0.0,
        });
    }
    let statistic = mean / (var / t as f64).sqrt();
    let p_value = Normal::standard().cdf(statistic);
    Ok(DmResult {
        statistic,
        p_value,
        a_beats_b: mean < 0.0 && p_value < sig,
        degenerate: false,
    })
}

/// Quantile forecasts of several methods on a common percentile grid, with
/// realized prices, for a run of validation days.
#[derive(Debug, Clone)]
pub struct ForecastTable {
    methods: Vec<String>,
    dates: Vec<NaiveDate>,
    grid: LevelGrid,
    /// `[method][day][hour]`
    values: Vec<Vec<Vec<Option<Vec<f64>>>>>,
    actuals: Vec<[Option<f64>; HOURS]>,
    excluded: Vec<[bool; HOURS]>,
}

impl ForecastTable {
    pub fn new(methods: Vec<String>, dates: Vec<NaiveDate>, grid: LevelGrid) -> Self {
        let days = dates.len();
        Self {
            values: vec![vec![vec![None; HOURS]; days]; methods.len()],
            actuals: vec![[None; HOURS]; days],
            excluded: vec![[false; HOURS]; days],
            methods,
            dates,
            grid,
        }
    }

    pub fn methods(&self) -> &[String] {
        &self.methods
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn grid(&self) -> &LevelGrid {
        &self.grid
    }

    pub fn method_index(&self, name: &str) -> Result<usize, EvalError> {
        self.methods
            .iter()
            .position(|m| m == name)
            .ok_or_else(|| EvalError::UnknownMethod(name.to_string()))
    }

    pub fn insert(&mut self, method: usize, day: usize, hour: usize, values: Vec<f64>) {
        self.values[method][day][hour] = Some(values);
    }

    pub fn set_actual(&mut self, day: usize, hour: usize, actual: f64) {
        self.actuals[day][hour] = Some(actual);
    }

    /// Drops a (day, hour) cell from scoring for every method.
    pub fn exclude(&mut self, day: usize, hour: usize) {
        self.excluded[day][hour] = true;
    }

    pub fn excluded_cells(&self) -> usize {
        self.excluded.iter().flatten().filter(|&&e| e).count()
    }

    fn missing(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (d, date) in self.dates.iter().enumerate() {
            for h in 0..HOURS {
                if self.excluded[d][h] {
                    continue;
                }
                if self.actuals[d][h].is_none() {
                    out.push(format!("{date} hour {h}: actual"));
                }
                for (m, name) in self.methods.iter().enumerate() {
                    match &self.values[m][d][h] {
                        Some(v) if v.len() == self.grid.len() => {}
                        _ => out.push(format!("{date} hour {h}: {name}")),
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportOptions {
    pub sig: f64,
    pub dm_variance: DmVariance,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            sig: 0.05,
            dm_variance: DmVariance::Sample,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub level: f64,
    /// Coverage pooled over all scored (day, hour) cells.
    pub overall: f64,
    pub per_hour: Vec<f64>,
    pub kupiec: Vec<KupiecResult>,
    pub hours_not_rejected: usize,
    pub hours_rejected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodReport {
    pub method: String,
    /// Mean pinball loss, `[hour][percentile]`.
    pub pinball: Vec<Vec<f64>>,
    /// Per hour, averaged over percentiles.
    pub hourly: Vec<f64>,
    /// Per percentile, averaged over hours.
    pub by_percentile: Vec<f64>,
    pub mean: f64,
    pub coverage: Vec<CoverageReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DmReport {
    pub methods: Vec<String>,
    /// One-sided p-values `[a][b][hour]` for "a beats b" on daily losses
    /// averaged over percentiles; `None` on the diagonal or too-short series.
    pub per_hour: Vec<Vec<Vec<Option<f64>>>>,
    /// `[a][b][percentile]` on daily losses averaged over hours.
    pub per_percentile: Vec<Vec<Vec<Option<f64>>>>,
    /// Number of hours where a beats b.
    pub hour_wins: Vec<Vec<usize>>,
    /// Number of percentiles where a beats b.
    pub percentile_wins: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub first_day: Option<NaiveDate>,
    pub last_day: Option<NaiveDate>,
    pub days: usize,
    pub excluded_cells: usize,
    pub sig: f64,
    pub levels: Vec<f64>,
    pub methods: Vec<MethodReport>,
    pub dm: DmReport,
}

/// Scores every method and runs all pairwise comparisons.
pub fn aggregate_report(table: &ForecastTable, options: ReportOptions) -> Result<EvaluationReport, EvalError> {
    let missing = table.missing();
    if !missing.is_empty() {
        return Err(EvalError::Incomplete(missing));
    }
    let levels = table.grid.levels().to_vec();
    let np = levels.len();
    let nm = table.methods.len();
    let days = table.dates.len();

    // daily losses [method][hour][percentile] -> Vec over scored days
    let mut losses = vec![vec![vec![Vec::new(); np]; HOURS]; nm];
    let mut hits = vec![vec![[0usize; 2]; HOURS]; nm];
    let mut scored = [0usize; HOURS];
    // per-day losses averaged over percentiles (hour series) and over hours (percentile series)
    let mut hour_series = vec![vec![Vec::new(); HOURS]; nm];
    let mut pct_series = vec![vec![Vec::new(); np]; nm];
    let coverage_idx: Vec<usize> = COVERAGE_LEVELS
        .iter()
        .map(|&l| table.grid.position(l).ok_or(EvalError::MissingLevel(l)))
        .collect::<Result<_, _>>()?;

    for d in 0..days {
        let hours: Vec<usize> = (0..HOURS).filter(|&h| !table.excluded[d][h]).collect();
        for &h in &hours {
            scored[h] += 1;
        }
        for m in 0..nm {
            let mut day_pct = vec![0.0; np];
            for &h in &hours {
                let actual = table.actuals[d][h].expect("checked complete");
                let q = table.values[m][d][h].as_ref().expect("checked complete");
                let mut sum = 0.0;
                for (p, (&qv, &a)) in q.iter().zip(&levels).enumerate() {
                    let l = pinball(qv, actual, a);
                    losses[m][h][p].push(l);
                    day_pct[p] += l;
                    sum += l;
                }
                hour_series[m][h].push(sum / np as f64);
                for (c, &idx) in coverage_idx.iter().enumerate() {
                    if actual < q[idx] {
                        hits[m][h][c] += 1;
                    }
                }
            }
            if !hours.is_empty() {
                for p in 0..np {
                    pct_series[m][p].push(day_pct[p] / hours.len() as f64);
                }
            }
        }
    }

    let mean = |v: &[f64]| {
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let mut methods = Vec::with_capacity(nm);
    for m in 0..nm {
        let pinball: Vec<Vec<f64>> = (0..HOURS)
            .map(|h| (0..np).map(|p| mean(&losses[m][h][p])).collect())
            .collect();
        let hourly: Vec<f64> = pinball.iter().map(|row| mean(row)).collect();
        let by_percentile: Vec<f64> = (0..np)
            .map(|p| mean(&(0..HOURS).map(|h| pinball[h][p]).collect::<Vec<_>>()))
            .collect();
        let grand = mean(&hourly);
        let mut coverage = Vec::new();
        for (c, &level) in COVERAGE_LEVELS.iter().enumerate() {
            let per_hour: Vec<f64> = (0..HOURS)
                .map(|h| {
                    if scored[h] == 0 {
                        f64::NAN
                    } else {
                        hits[m][h][c] as f64 / scored[h] as f64
                    }
                })
                .collect();
            let kupiec: Vec<KupiecResult> = (0..HOURS)
                .filter(|&h| scored[h] > 0)
                .map(|h| kupiec_test(hits[m][h][c], scored[h], level, options.sig))
                .collect::<Result<_, _>>()?;
            let total_hits: usize = (0..HOURS).map(|h| hits[m][h][c]).sum();
            let total: usize = scored.iter().sum();
            let rejected = kupiec.iter().filter(|k| k.reject).count();
            coverage.push(CoverageReport {
                level,
                overall: if total == 0 {
                    f64::NAN
                } else {
                    total_hits as f64 / total as f64
                },
                per_hour,
                hours_not_rejected: kupiec.len() - rejected,
                hours_rejected: rejected,
                kupiec,
            });
        }
        methods.push(MethodReport {
            method: table.methods[m].clone(),
            pinball,
            hourly,
            by_percentile,
            mean: grand,
            coverage,
        });
    }

    let pair = |series: &Vec<Vec<Vec<f64>>>, len: usize| {
        let mut p = vec![vec![vec![None; len]; nm]; nm];
        let mut wins = vec![vec![0usize; nm]; nm];
        for a in 0..nm {
            for b in 0..nm {
                if a == b {
                    continue;
                }
                for k in 0..len {
                    if let Ok(r) = dm_test_with(&series[a][k], &series[b][k], options.sig, options.dm_variance) {
                        p[a][b][k] = Some(r.p_value);
                        if r.a_beats_b {
                            wins[a][b] += 1;
                        }
                    }
                }
            }
        }
        (p, wins)
    };
    let (per_hour, hour_wins) = pair(&hour_series, HOURS);
    let (per_percentile, percentile_wins) = pair(&pct_series, np);

    Ok(EvaluationReport {
        first_day: table.dates.first().copied(),
        last_day: table.dates.last().copied(),
        days,
        excluded_cells: table.excluded_cells(),
        sig: options.sig,
        levels,
        methods,
        dm: DmReport {
            methods: table.methods.clone(),
            per_hour,
            per_percentile,
            hour_wins,
            percentile_wins,
        },
    })
}

fn percent_label(level: f64) -> String {
    let p = level * 100.0;
    if (p - p.round()).abs() < 1e-9 {
        format!("{}", p.round() as i64)
    } else {
        format!("{p}")
    }
}

fn number(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

impl EvaluationReport {
    pub fn method(&self, name: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == name)
    }

    /// Long-format CSV with columns `method,hour,percentile,metric,value`.
    /// Aggregated dimensions are left empty; DM rows name the pair as
    /// `A>B` (p-value of A beating B).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,hour,percentile,metric,value\n");
        let mut row = |method: &str, hour: Option<usize>, pct: Option<String>, metric: &str, value: String| {
            let hour = hour.map(|h| h.to_string()).unwrap_or_default();
            let pct = pct.unwrap_or_default();
            let _ = writeln!(out, "{method},{hour},{pct},{metric},{value}");
        };
        let labels: Vec<String> = self.levels.iter().map(|&l| percent_label(l)).collect();
        for m in &self.methods {
            for (h, row_vals) in m.pinball.iter().enumerate() {
                for (p, &v) in row_vals.iter().enumerate() {
                    row(&m.method, Some(h), Some(labels[p].clone()), "pinball", number(v));
                }
            }
            for (h, &v) in m.hourly.iter().enumerate() {
                row(&m.method, Some(h), None, "pinball_hour", number(v));
            }
            for (p, &v) in m.by_percentile.iter().enumerate() {
                row(
                    &m.method,
                    None,
                    Some(labels[p].clone()),
                    "pinball_percentile",
                    number(v),
                );
            }
            row(&m.method, None, None, "pinball_mean", number(m.mean));
            for c in &m.coverage {
                let label = percent_label(c.level);
                row(&m.method, None, Some(label.clone()), "coverage", number(c.overall));
                for (h, &v) in c.per_hour.iter().enumerate() {
                    row(&m.method, Some(h), Some(label.clone()), "coverage", number(v));
                }
                for (h, k) in c.kupiec.iter().enumerate() {
                    row(
                        &m.method,
                        Some(h),
                        Some(label.clone()),
                        "kupiec_lr",
                        number(k.statistic),
                    );
                    row(&m.method, Some(h), Some(label.clone()), "kupiec_p", number(k.p_value));
                    row(
                        &m.method,
                        Some(h),
                        Some(label.clone()),
                        "kupiec_reject",
                        u8::from(k.reject).to_string(),
                    );
                }
                row(
                    &m.method,
                    None,
                    Some(label.clone()),
                    "kupiec_hours_not_rejected",
                    c.hours_not_rejected.to_string(),
                );
                row(
                    &m.method,
                    None,
                    Some(label),
                    "kupiec_hours_rejected",
                    c.hours_rejected.to_string(),
                );
            }
        }
        let names = &self.dm.methods;
        for (a, name_a) in names.iter().enumerate() {
            for (b, name_b) in names.iter().enumerate() {
                if a == b {
                    continue;
                }
                let pair = format!("{name_a}>{name_b}");
                for (h, p) in self.dm.per_hour[a][b].iter().enumerate() {
                    row(&pair, Some(h), None, "dm_p", p.map(number).unwrap_or_default());
                }
                for (k, p) in self.dm.per_percentile[a][b].iter().enumerate() {
                    row(
                        &pair,
                        None,
                        Some(labels[k].clone()),
                        "dm_p",
                        p.map(number).unwrap_or_default(),
                    );
                }
                row(&pair, None, None, "dm_hour_wins", self.dm.hour_wins[a][b].to_string());
                row(
                    &pair,
                    None,
                    None,
                    "dm_percentile_wins",
                    self.dm.percentile_wins[a][b].to_string(),
                );
            }
        }
        out
    }

    /// Nested JSON; non-finite numbers become `null`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report is serializable")
    }
}

//! The five ARX expert models and their day-ahead point forecasts.
//!
//! Every model is estimated separately for each delivery hour `h`:
//!
//! - `M1`: lags 1, 2 and 7 of hour `h`, exogenous forecasts, day-type dummies
//! - `M2`: lags 1 to 7
//! - `M3`: `M2` plus the minimum and maximum of the previous day's 24 prices
//! - `M4`: `M1` estimated on prices with damped spikes
//! - `M5`: `M2` written around the weekly mean of the lags
//!
//! Regressor columns are laid out as lags, exogenous variables, the four
//! day-type dummies (Monday, Saturday, Sunday/holiday, other) and, for `M3`,
//! the previous-day minimum and maximum. There is no separate intercept.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use thiserror::Error;

use crate::solvers::{ols_fit_with_rank, DesignMatrix, SolverError};
use crate::timeseries::{CalendarDummies, DayRow, DayType, HourlyPanel, HOURS};

/// Days of price history needed before the first response day.
pub const MAX_LAG: usize = 7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArxError {
    #[error("input series have different lengths")]
    LengthMismatch,
    #[error("hour {0} is outside 0..24")]
    HourOutOfRange(usize),
    #[error("day {day} needs {MAX_LAG} days of price history")]
    InsufficientHistory { day: usize },
    #[error("day {day} is outside the {len}-day series")]
    OutOfRange { day: usize, len: usize },
    #[error("estimation window is empty")]
    EmptyEstimation,
    #[error("spike clip level {0} is zero, the damping transform is undefined")]
    UndefinedClip(f64),
    #[error("spike clip levels must satisfy upper > lower (got {upper}, {lower})")]
    InvalidClip { upper: f64, lower: f64 },
    #[error("non-finite point forecast")]
    NonFinite,
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelSpec {
    M1,
    M2,
    M3,
    /// `M1` on spike-clipped prices.
    M4,
    /// Weekly-mean formulation of `M2`.
    M5,
}

impl ModelSpec {
    pub const ALL: [ModelSpec; 5] = [Self::M1, Self::M2, Self::M3, Self::M4, Self::M5];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::M1 => "M1",
            Self::M2 => "M2",
            Self::M3 => "M3",
            Self::M4 => "M4",
            Self::M5 => "M5",
        }
    }

    pub fn lags(self) -> &'static [usize] {
        match self {
            Self::M1 | Self::M4 => &[1, 2, 7],
            _ => &[1, 2, 3, 4, 5, 6, 7],
        }
    }

    fn has_extremes(self) -> bool {
        self == Self::M3
    }

    pub fn n_columns(self, n_exogenous: usize) -> usize {
        self.lags().len() + n_exogenous + 4 + if self.has_extremes() { 2 } else { 0 }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown model `{s}`"))
    }
}

/// Prices (on the working scale), exogenous forecasts and day types for a
/// run of consecutive days. Day indices below are positions in these slices.
#[derive(Debug, Clone)]
pub struct ArxData<'a> {
    prices: &'a [DayRow],
    exogenous: Vec<&'a [DayRow]>,
    day_types: &'a [DayType],
}

impl<'a> ArxData<'a> {
    pub fn new(prices: &'a [DayRow], exogenous: Vec<&'a [DayRow]>, day_types: &'a [DayType]) -> Result<Self, ArxError> {
        let n = prices.len();
        if day_types.len() != n || exogenous.iter().any(|e| e.len() != n) {
            return Err(ArxError::LengthMismatch);
        }
        Ok(Self {
            prices,
            exogenous,
            day_types,
        })
    }

    /// Whole panel on the price scale.
    pub fn from_panel(panel: &'a HourlyPanel, dummies: &'a CalendarDummies) -> Result<Self, ArxError> {
        Self::new(
            panel.prices(),
            panel.exogenous().iter().map(|e| e.values.as_slice()).collect(),
            &dummies.types,
        )
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    pub fn n_exogenous(&self) -> usize {
        self.exogenous.len()
    }

    pub fn prices(&self) -> &'a [DayRow] {
        self.prices
    }

    fn check_day(&self, day: usize) -> Result<(), ArxError> {
        if day >= self.len() {
            return Err(ArxError::OutOfRange { day, len: self.len() });
        }
        if day < MAX_LAG {
            return Err(ArxError::InsufficientHistory { day });
        }
        Ok(())
    }

    fn check_estimation(&self, days: &Range<usize>) -> Result<(), ArxError> {
        if days.is_empty() {
            return Err(ArxError::EmptyEstimation);
        }
        self.check_day(days.start)?;
        self.check_day(days.end - 1)
    }
}

/// Damping thresholds for price spikes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpikeClipConfig {
    upper: f64,
    lower: f64,
}

impl SpikeClipConfig {
    pub fn new(upper: f64, lower: f64) -> Result<Self, ArxError> {
        if !(upper > lower) || !upper.is_finite() || !lower.is_finite() {
            return Err(ArxError::InvalidClip { upper, lower });
        }
        Ok(Self { upper, lower })
    }

    /// `mu +- 3 sigma` of `prices` (unbiased sigma); `None` when the prices
    /// are constant or fewer than two, in which case nothing is clipped.
    pub fn from_prices(prices: &[f64]) -> Option<Self> {
        let n = prices.len();
        if n < 2 {
            return None;
        }
        let mu = prices.iter().sum::<f64>() / n as f64;
        let sigma = (prices.iter().map(|p| (p - mu).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        Self::new(mu + 3.0 * sigma, mu - 3.0 * sigma).ok()
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }
}

/// Logarithmic damping of one price beyond the clip levels.
///
/// Above `L_U`: `L_U + L_U log10(|P / L_U|)`; below `L_L`:
/// `L_L - |L_L| log10(|P / L_L|)`. The upper branch needs `L_U > 0` and the
/// lower one `L_L < 0` to be monotone; otherwise that side is left as is.
pub fn clip_value(price: f64, cfg: &SpikeClipConfig) -> Result<f64, ArxError> {
    let (u, l) = (cfg.upper, cfg.lower);
    if u == 0.0 {
        return Err(ArxError::UndefinedClip(u));
    }
    if l == 0.0 {
        return Err(ArxError::UndefinedClip(l));
    }
    Ok(if price > u && u > 0.0 {
        u + u * (price / u).abs().log10()
    } else if price < l && l < 0.0 {
        l - l.abs() * (price / l).abs().log10()
    } else {
        price
    })
}

pub fn clip_spikes(prices: &[f64], cfg: &SpikeClipConfig) -> Result<Vec<f64>, ArxError> {
    prices.iter().map(|&p| clip_value(p, cfg)).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ArxOptions {
    /// Center and scale each exogenous column over the estimation window.
    pub standardize_exogenous: bool,
}

/// Estimated parameters in named form.
#[derive(Debug, Clone, PartialEq)]
pub struct ArxCoefficients {
    /// `(lag, theta)` pairs.
    pub theta: Vec<(usize, f64)>,
    pub psi: Vec<f64>,
    /// Monday, Saturday, Sunday/holiday, other.
    pub alpha: [f64; 4],
    pub delta: Option<f64>,
    pub eta: Option<f64>,
}

impl ArxCoefficients {
    fn from_vector(spec: ModelSpec, n_exogenous: usize, w: &[f64]) -> Self {
        let lags = spec.lags();
        let nl = lags.len();
        let theta = lags.iter().copied().zip(w[..nl].iter().copied()).collect();
        let psi = w[nl..nl + n_exogenous].to_vec();
        let d = nl + n_exogenous;
        let alpha = [w[d], w[d + 1], w[d + 2], w[d + 3]];
        let (delta, eta) = if spec.has_extremes() {
            (Some(w[d + 4]), Some(w[d + 5]))
        } else {
            (None, None)
        };
        Self {
            theta,
            psi,
            alpha,
            delta,
            eta,
        }
    }
}

/// The hour-`h` price series a model regresses on: spike-clipped for `M4`.
fn model_series(
    data: &ArxData<'_>,
    hour: usize,
    spec: ModelSpec,
    clip: Option<&SpikeClipConfig>,
) -> Result<Vec<f64>, ArxError> {
    let raw: Vec<f64> = data.prices.iter().map(|d| d[hour]).collect();
    match (spec, clip) {
        (ModelSpec::M4, Some(cfg)) => clip_spikes(&raw, cfg),
        _ => Ok(raw),
    }
}

/// Regressor row for `day` and the offset added back to the linear form
/// (the weekly mean for `M5`, zero otherwise).
fn regressors(data: &ArxData<'_>, series: &[f64], hour: usize, spec: ModelSpec, day: usize) -> (Vec<f64>, f64) {
    let mut row = Vec::with_capacity(spec.n_columns(data.n_exogenous()));
    let offset = if spec == ModelSpec::M5 {
        (1..=MAX_LAG).map(|l| series[day - l]).sum::<f64>() / MAX_LAG as f64
    } else {
        0.0
    };
    row.extend(spec.lags().iter().map(|&l| series[day - l] - offset));
    row.extend(data.exogenous.iter().map(|e| e[day][hour]));
    row.extend(data.day_types[day].indicator());
    if spec.has_extremes() {
        let prev = &data.prices[day - 1];
        row.push(prev.iter().cloned().fold(f64::INFINITY, f64::min));
        row.push(prev.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    }
    (row, offset)
}

fn clip_for(data: &ArxData<'_>, hour: usize, spec: ModelSpec, days: &Range<usize>) -> Option<SpikeClipConfig> {
    (spec == ModelSpec::M4)
        .then(|| {
            let window: Vec<f64> = data.prices[days.clone()].iter().map(|d| d[hour]).collect();
            SpikeClipConfig::from_prices(&window)
        })
        .flatten()
}

/// Design matrix and response over the response days `days`.
///
/// For `M5` the response is the price minus its weekly mean; for `M4` both
/// response and lags are spike-clipped with levels estimated over `days`.
pub fn build_design(
    data: &ArxData<'_>,
    hour: usize,
    spec: ModelSpec,
    days: Range<usize>,
) -> Result<(DesignMatrix, Vec<f64>), ArxError> {
    if hour >= HOURS {
        return Err(ArxError::HourOutOfRange(hour));
    }
    data.check_estimation(&days)?;
    let clip = clip_for(data, hour, spec, &days);
    let series = model_series(data, hour, spec, clip.as_ref())?;
    let ncols = spec.n_columns(data.n_exogenous());
    let mut flat = Vec::with_capacity(days.len() * ncols);
    let mut y = Vec::with_capacity(days.len());
    for day in days.clone() {
        let (row, offset) = regressors(data, &series, hour, spec, day);
        flat.extend(row);
        y.push(series[day] - offset);
    }
    Ok((DesignMatrix::from_row_major(days.len(), ncols, &flat)?, y))
}

/// One estimated expert model for one hour.
#[derive(Debug, Clone, PartialEq)]
pub struct ArxFit {
    spec: ModelSpec,
    hour: usize,
    weights: Vec<f64>,
    clip: Option<SpikeClipConfig>,
    /// `(mean, sd)` per exogenous column when standardized.
    exogenous_scaling: Option<Vec<(f64, f64)>>,
}

impl ArxFit {
    /// OLS on the response days `estimation`.
    pub fn fit(
        data: &ArxData<'_>,
        hour: usize,
        spec: ModelSpec,
        estimation: Range<usize>,
        options: ArxOptions,
    ) -> Result<Self, ArxError> {
        let (x, y) = build_design(data, hour, spec, estimation.clone())?;
        let nl = spec.lags().len();
        let nz = data.n_exogenous();
        let (x, exogenous_scaling) = if options.standardize_exogenous {
            let mut m = x.matrix().clone();
            let scaling: Vec<(f64, f64)> = (nl..nl + nz)
                .map(|j| {
                    let col = m.column(j);
                    let n = col.len() as f64;
                    let mean = col.sum() / n;
                    let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                    (mean, if sd > 0.0 { sd } else { 1.0 })
                })
                .collect();
            for (k, &(mean, sd)) in scaling.iter().enumerate() {
                m.column_mut(nl + k).apply(|v| *v = (*v - mean) / sd);
            }
            (DesignMatrix::new(m)?, Some(scaling))
        } else {
            (x, None)
        };
        let (weights, rank) = ols_fit_with_rank(&x, &y)?;
        // the demeaned lags of M5 always sum to zero; night hours often have an all-zero solar column
        let expected = x.ncols() - usize::from(spec == ModelSpec::M5);
        if rank < expected {
            log::debug!("{spec} hour {hour}: design rank {rank} below {expected}; using minimum-norm solution");
        }
        Ok(Self {
            spec,
            hour,
            weights,
            clip: clip_for(data, hour, spec, &estimation),
            exogenous_scaling,
        })
    }

    pub fn spec(&self) -> ModelSpec {
        self.spec
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn clip(&self) -> Option<&SpikeClipConfig> {
        self.clip.as_ref()
    }

    /// Named coefficients; exogenous coefficients refer to standardized
    /// columns when standardization was requested.
    pub fn coefficients(&self, n_exogenous: usize) -> ArxCoefficients {
        ArxCoefficients::from_vector(self.spec, n_exogenous, &self.weights)
    }

    /// Point forecast for `day` on the working price scale.
    pub fn forecast(&self, data: &ArxData<'_>, day: usize) -> Result<f64, ArxError> {
        data.check_day(day)?;
        let series = model_series(data, self.hour, self.spec, self.clip.as_ref())?;
        let (mut row, offset) = regressors(data, &series, self.hour, self.spec, day);
        if let Some(scaling) = &self.exogenous_scaling {
            let nl = self.spec.lags().len();
            for (k, &(mean, sd)) in scaling.iter().enumerate() {
                row[nl + k] = (row[nl + k] - mean) / sd;
            }
        }
        let value = offset + row.iter().zip(&self.weights).map(|(x, w)| x * w).sum::<f64>();
        if value.is_finite() {
            Ok(value)
        } else {
            Err(ArxError::NonFinite)
        }
    }
}

/// Fits `spec` on the response days `estimation` and forecasts `target`.
pub fn fit_and_forecast(
    data: &ArxData<'_>,
    hour: usize,
    spec: ModelSpec,
    estimation: Range<usize>,
    target: usize,
    options: ArxOptions,
) -> Result<f64, ArxError> {
    ArxFit::fit(data, hour, spec, estimation, options)?.forecast(data, target)
}

/// Forecasts of all five models for one hour and target day.
pub fn forecast_models(
    data: &ArxData<'_>,
    hour: usize,
    estimation: Range<usize>,
    target: usize,
    options: ArxOptions,
) -> Result<[f64; 5], ArxError> {
    let mut out = [0.0; 5];
    for spec in ModelSpec::ALL {
        out[spec.index()] = fit_and_forecast(data, hour, spec, estimation.clone(), target, options)?;
    }
    Ok(out)
}

/// Point forecasts of the five models (columns `M1..M5`) for one hour,
/// one row per day, with the realized prices.
#[derive(Debug, Clone, PartialEq)]
pub struct PointForecastMatrix {
    forecasts: Vec<[f64; 5]>,
    actuals: Vec<f64>,
}

impl PointForecastMatrix {
    pub fn new(forecasts: Vec<[f64; 5]>, actuals: Vec<f64>) -> Result<Self, ArxError> {
        if forecasts.len() != actuals.len() {
            return Err(ArxError::LengthMismatch);
        }
        if forecasts.iter().flatten().chain(&actuals).any(|v| !v.is_finite()) {
            return Err(ArxError::NonFinite);
        }
        Ok(Self { forecasts, actuals })
    }

    pub fn len(&self) -> usize {
        self.actuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actuals.is_empty()
    }

    pub fn rows(&self) -> &[[f64; 5]] {
        &self.forecasts
    }

    pub fn actuals(&self) -> &[f64] {
        &self.actuals
    }

    pub fn column(&self, spec: ModelSpec) -> Vec<f64> {
        self.forecasts.iter().map(|r| r[spec.index()]).collect()
    }
}

/// Rolling pool: each target day is forecast by models estimated on the
/// `estimation_days` days immediately before it.
pub fn forecast_pool(
    data: &ArxData<'_>,
    hour: usize,
    targets: &[usize],
    estimation_days: usize,
    options: ArxOptions,
) -> Result<PointForecastMatrix, ArxError> {
    let mut forecasts = Vec::with_capacity(targets.len());
    let mut actuals = Vec::with_capacity(targets.len());
    for &t in targets {
        let start = t
            .checked_sub(estimation_days)
            .ok_or(ArxError::InsufficientHistory { day: t })?;
        forecasts.push(forecast_models(data, hour, start..t, t, options)?);
        actuals.push(data.prices[t][hour]);
    }
    PointForecastMatrix::new(forecasts, actuals)
}

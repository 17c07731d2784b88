//! Probabilistic day-ahead electricity price forecasting.
//!
//! The crate builds predictive distributions for hourly day-ahead prices by
//! combining a pool of ARX point forecasts with either quantile regression
//! (QRA) or expectile regression (ERA), and benchmarks them against
//! historical simulation in quantile and expectile coordinates. Expectile
//! forecasts are mapped to quantiles by recovering a discrete CDF, and a
//! variance-stabilizing asinh transform can be applied before modelling and
//! inverted by Monte Carlo afterwards.
//!
//! Module map:
//!
//! - [`timeseries`]: panel ingestion, calendar dummies, window slicing
//! - [`transform`]: asinh normalization and Monte Carlo inversion
//! - [`solvers`]: OLS, expectile and quantile regression, sample functionals
//! - [`arx`]: the five expert models and the point-forecast pool
//! - [`distribution`]: level grids, curves, historical simulation, conversion
//! - [`averaging`]: QRA and ERA weight estimation and prediction
//! - [`evaluation`]: pinball loss, coverage, Kupiec and Diebold-Mariano tests
//! - [`backtest`]: the rolling-window pipeline
//! - [`synth`]: synthetic ARX panels with known ground truth

pub mod arx;
pub mod averaging;
pub mod backtest;
pub mod distribution;
pub mod evaluation;
pub mod solvers;
pub mod synth;
pub mod timeseries;
pub mod transform;

pub use timeseries::{HourlyPanel, HOURS};

//! Forecast averaging: per-level regressions of realized prices on the pool
//! of point forecasts. QRA fits quantile regressions on the percentile grid,
//! ERA fits expectile regressions on the expectile grid.

use std::fmt;

use thiserror::Error;

use crate::distribution::{DistributionError, ExpectileCurve, LevelGrid, QuantileCurve};
use crate::solvers::{expectile_fit_traced, quantile_fit_warm, DesignMatrix, SolverError, WeightVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AveragingError {
    #[error("{rows} calibration rows for {columns} regressors; need at least {needed}")]
    TooFewRows { rows: usize, columns: usize, needed: usize },
    #[error("forecast rows and actuals differ in length ({rows} vs {actuals})")]
    LengthMismatch { rows: usize, actuals: usize },
    #[error("expected {expected} forecasts, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("level {level}: {source}")]
    Level { level: f64, source: SolverError },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AveragingMethod {
    Qra,
    Era,
}

impl fmt::Display for AveragingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Qra => "QRA",
            Self::Era => "ERA",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AveragingOptions {
    /// Append a constant column to the forecast pool.
    pub intercept: bool,
}

/// Weight vectors for every level of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragingFit {
    method: AveragingMethod,
    grid: LevelGrid,
    weights: Vec<WeightVector>,
    n_models: usize,
    intercept: bool,
}

/// Predictive curve typed by the averaging method that produced it.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Quantiles(QuantileCurve),
    Expectiles(ExpectileCurve),
}

impl AveragingFit {
    pub fn method(&self) -> AveragingMethod {
        self.method
    }

    pub fn grid(&self) -> &LevelGrid {
        &self.grid
    }

    pub fn weights(&self) -> &[WeightVector] {
        &self.weights
    }

    pub fn n_models(&self) -> usize {
        self.n_models
    }

    fn raw_values(&self, forecasts: &[f64]) -> Result<Vec<f64>, AveragingError> {
        if forecasts.len() != self.n_models {
            return Err(AveragingError::DimensionMismatch {
                expected: self.n_models,
                got: forecasts.len(),
            });
        }
        let row = design_row(forecasts, self.intercept);
        Ok(self.weights.iter().map(|w| w.predict(&row)).collect())
    }

    /// Curve for one target day; crossings are repaired by rearrangement.
    pub fn predict(&self, forecasts: &[f64]) -> Result<Prediction, AveragingError> {
        let values = self.raw_values(forecasts)?;
        Ok(match self.method {
            AveragingMethod::Qra => Prediction::Quantiles(QuantileCurve::new(self.grid.clone(), values)?.repaired()),
            AveragingMethod::Era => Prediction::Expectiles(ExpectileCurve::new(self.grid.clone(), values)?.repaired()),
        })
    }
}

fn design_row(forecasts: &[f64], intercept: bool) -> Vec<f64> {
    let mut row = forecasts.to_vec();
    if intercept {
        row.push(1.0);
    }
    row
}

fn design<R: AsRef<[f64]>>(
    rows: &[R],
    actuals: &[f64],
    options: AveragingOptions,
) -> Result<(DesignMatrix, usize), AveragingError> {
    if rows.len() != actuals.len() {
        return Err(AveragingError::LengthMismatch {
            rows: rows.len(),
            actuals: actuals.len(),
        });
    }
    let k = rows.first().map_or(0, |r| r.as_ref().len());
    if let Some(bad) = rows.iter().find(|r| r.as_ref().len() != k) {
        return Err(AveragingError::DimensionMismatch {
            expected: k,
            got: bad.as_ref().len(),
        });
    }
    let columns = k + usize::from(options.intercept);
    if columns == 0 || rows.len() < 2 * columns {
        return Err(AveragingError::TooFewRows {
            rows: rows.len(),
            columns,
            needed: 2 * columns.max(1),
        });
    }
    let flat: Vec<f64> = rows
        .iter()
        .flat_map(|r| design_row(r.as_ref(), options.intercept))
        .collect();
    Ok((DesignMatrix::from_row_major(rows.len(), columns, &flat)?, k))
}

/// Level indices ordered from the middle of the grid outwards, each paired
/// with the already-fitted neighbour used as a warm start.
fn fitting_order(grid: &LevelGrid) -> Vec<(usize, Option<usize>)> {
    let levels = grid.levels();
    let mid = (0..levels.len())
        .min_by(|&a, &b| (levels[a] - 0.5).abs().total_cmp(&(levels[b] - 0.5).abs()))
        .unwrap_or(0);
    let mut order = vec![(mid, None)];
    order.extend((mid + 1..levels.len()).map(|i| (i, Some(i - 1))));
    order.extend((0..mid).rev().map(|i| (i, Some(i + 1))));
    order
}

/// Quantile regression averaging on `grid` (percentiles by default).
pub fn fit_qra<R: AsRef<[f64]>>(
    rows: &[R],
    actuals: &[f64],
    grid: &LevelGrid,
    options: AveragingOptions,
) -> Result<AveragingFit, AveragingError> {
    let (x, n_models) = design(rows, actuals, options)?;
    let mut weights: Vec<Option<WeightVector>> = vec![None; grid.len()];
    let mut bases: Vec<Option<Vec<usize>>> = vec![None; grid.len()];
    for (i, warm) in fitting_order(grid) {
        let level = grid.levels()[i];
        let hint = warm.and_then(|w| bases[w].as_deref());
        let sol =
            quantile_fit_warm(&x, actuals, level, hint).map_err(|source| AveragingError::Level { level, source })?;
        weights[i] = Some(sol.weights);
        bases[i] = Some(sol.basis);
    }
    Ok(AveragingFit {
        method: AveragingMethod::Qra,
        grid: grid.clone(),
        weights: weights.into_iter().flatten().collect(),
        n_models,
        intercept: options.intercept,
    })
}

/// Expectile regression averaging on `grid` (the expectile grid by default).
pub fn fit_era<R: AsRef<[f64]>>(
    rows: &[R],
    actuals: &[f64],
    grid: &LevelGrid,
    options: AveragingOptions,
) -> Result<AveragingFit, AveragingError> {
    let (x, n_models) = design(rows, actuals, options)?;
    let mut weights: Vec<Option<WeightVector>> = vec![None; grid.len()];
    for (i, warm) in fitting_order(grid) {
        let level = grid.levels()[i];
        let start = warm.and_then(|w| weights[w].as_ref().map(|v| v.coefficients().to_vec()));
        let trace = expectile_fit_traced(&x, actuals, level, start.as_deref())
            .map_err(|source| AveragingError::Level { level, source })?;
        weights[i] = Some(trace.weights);
    }
    Ok(AveragingFit {
        method: AveragingMethod::Era,
        grid: grid.clone(),
        weights: weights.into_iter().flatten().collect(),
        n_models,
        intercept: options.intercept,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::{ols_fit, quantile_objective};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn two_model_pool(n: usize, noise: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise).unwrap();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.random_range(20.0..80.0), rng.random_range(20.0..80.0)])
            .collect();
        let y = rows
            .iter()
            .map(|r| 0.7 * r[0] + 0.3 * r[1] + normal.sample(&mut rng))
            .collect();
        (rows, y)
    }

    fn curve_values(p: Prediction) -> Vec<f64> {
        match p {
            Prediction::Quantiles(c) => c.into_values(),
            Prediction::Expectiles(c) => c.into_values(),
        }
    }

    #[test]
    fn perfect_single_forecast_gets_unit_weight() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![10.0 + i as f64]).collect();
        let y: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let q = fit_qra(&rows, &y, &LevelGrid::percentiles(), AveragingOptions::default()).unwrap();
        let e = fit_era(&rows, &y, &LevelGrid::expectile_default(), AveragingOptions::default()).unwrap();
        for w in q.weights().iter().chain(e.weights()) {
            assert!((w.coefficients()[0] - 1.0).abs() < 1e-9, "level {}", w.level());
        }
    }

    #[test]
    fn median_weights_are_consistent() {
        let (rows, y) = two_model_pool(2000, 3.0, 1);
        let grid = LevelGrid::new(vec![0.5]).unwrap();
        let fit = fit_qra(&rows, &y, &grid, AveragingOptions::default()).unwrap();
        let w = fit.weights()[0].coefficients();
        assert!((w[0] - 0.7).abs() < 0.1 && (w[1] - 0.3).abs() < 0.1, "{w:?}");
    }

    #[test]
    fn median_level_is_least_absolute_deviations() {
        let (rows, y) = two_model_pool(40, 5.0, 2);
        let fit = fit_qra(
            &rows,
            &y,
            &LevelGrid::new(vec![0.5]).unwrap(),
            AveragingOptions::default(),
        )
        .unwrap();
        let x = DesignMatrix::from_rows(&rows).unwrap();
        let got = quantile_objective(&x, &y, fit.weights()[0].coefficients(), 0.5);
        // every LAD optimum interpolates two observations
        let mut best = f64::INFINITY;
        for i in 0..40 {
            for j in (i + 1)..40 {
                let (a, b) = (&rows[i], &rows[j]);
                let det = a[0] * b[1] - a[1] * b[0];
                let w0 = (y[i] * b[1] - a[1] * y[j]) / det;
                let w1 = (a[0] * y[j] - y[i] * b[0]) / det;
                best = best.min(quantile_objective(&x, &y, &[w0, w1], 0.5));
            }
        }
        assert!((got - best).abs() <= 1e-6 * best);
    }

    #[test]
    fn era_median_is_ols() {
        let (rows, y) = two_model_pool(300, 4.0, 3);
        let fit = fit_era(&rows, &y, &LevelGrid::expectile_default(), AveragingOptions::default()).unwrap();
        let ols = ols_fit(&DesignMatrix::from_rows(&rows).unwrap(), &y).unwrap();
        let mid = fit.grid().position(0.5).unwrap();
        for (a, b) in fit.weights()[mid].coefficients().iter().zip(&ols) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn expectile_spread_grows_with_noise() {
        let grid = LevelGrid::new(vec![0.1, 0.5, 0.9]).unwrap();
        let spread = |noise: f64| {
            let (rows, y) = two_model_pool(1000, noise, 4);
            let fit = fit_era(&rows, &y, &grid, AveragingOptions::default()).unwrap();
            let v = curve_values(fit.predict(&[50.0, 50.0]).unwrap());
            v[2] - v[0]
        };
        let (small, large) = (spread(2.0), spread(6.0));
        assert!(small > 0.0 && large > small, "{small} {large}");
    }

    #[test]
    fn one_hot_weights_give_a_flat_curve() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let y: Vec<f64> = rows.iter().map(|r| r[1]).collect();
        let fit = fit_qra(&rows, &y, &LevelGrid::percentiles(), AveragingOptions::default()).unwrap();
        let v = curve_values(fit.predict(&[3.0, 17.0]).unwrap());
        assert!(v.iter().all(|&x| (x - 17.0).abs() < 1e-9));
    }

    #[test]
    fn predictions_are_homogeneous_and_monotone() {
        let (rows, y) = two_model_pool(400, 5.0, 5);
        let fit = fit_qra(&rows, &y, &LevelGrid::percentiles(), AveragingOptions::default()).unwrap();
        let a = curve_values(fit.predict(&[40.0, 60.0]).unwrap());
        let b = curve_values(fit.predict(&[80.0, 120.0]).unwrap());
        assert!(a.windows(2).all(|w| w[0] <= w[1]));
        for (x, y) in a.iter().zip(&b) {
            assert!((2.0 * x - y).abs() < 1e-9 * y.abs().max(1.0));
        }
    }

    #[test]
    fn permuted_weights_are_repaired() {
        let (rows, y) = two_model_pool(200, 5.0, 6);
        let mut fit = fit_qra(&rows, &y, &LevelGrid::percentiles(), AveragingOptions::default()).unwrap();
        fit.weights.reverse();
        let Prediction::Quantiles(c) = fit.predict(&[50.0, 50.0]).unwrap() else {
            panic!("QRA must predict quantiles")
        };
        assert!(c.is_monotone());
    }

    #[test]
    fn low_level_weights_ignore_the_upper_tail() {
        let (rows, mut y) = two_model_pool(500, 5.0, 7);
        let grid = LevelGrid::new(vec![0.1]).unwrap();
        let before = fit_qra(&rows, &y, &grid, AveragingOptions::default()).unwrap();
        let mut sorted = y.clone();
        sorted.sort_by(f64::total_cmp);
        let cut = sorted[(0.9 * 500.0) as usize];
        y.iter_mut().filter(|v| **v > cut).for_each(|v| *v += 100.0);
        let after = fit_qra(&rows, &y, &grid, AveragingOptions::default()).unwrap();
        for (a, b) in before.weights()[0]
            .coefficients()
            .iter()
            .zip(after.weights()[0].coefficients())
        {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn intercept_is_opt_in() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = rows.iter().map(|r| r[0] + 5.0).collect();
        let grid = LevelGrid::new(vec![0.5]).unwrap();
        let with = fit_era(&rows, &y, &grid, AveragingOptions { intercept: true }).unwrap();
        let w = with.weights()[0].coefficients();
        assert!((w[0] - 1.0).abs() < 1e-9 && (w[1] - 5.0).abs() < 1e-9);
        let without = fit_era(&rows, &y, &grid, AveragingOptions::default()).unwrap();
        assert_eq!(without.weights()[0].coefficients().len(), 1);
    }

    #[test]
    fn shape_errors() {
        let rows = vec![vec![1.0, 2.0]; 3];
        assert!(matches!(
            fit_qra(&rows, &[1.0; 3], &LevelGrid::percentiles(), AveragingOptions::default()),
            Err(AveragingError::TooFewRows { needed: 4, .. })
        ));
        let (rows, y) = two_model_pool(50, 1.0, 8);
        let fit = fit_qra(&rows, &y, &LevelGrid::percentiles(), AveragingOptions::default()).unwrap();
        assert!(matches!(
            fit.predict(&[1.0]),
            Err(AveragingError::DimensionMismatch { expected: 2, got: 1 })
        ));
    }
}

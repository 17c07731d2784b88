//! Regression machinery: least squares, expectile regression (asymmetric
//! squared loss) and quantile regression (asymmetric absolute loss), plus
//! sample expectiles and quantiles.

mod expectile;
mod nnls;
mod quantile;
mod sample;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub use expectile::{expectile_fit, expectile_fit_traced, IrlsTrace};
pub use nnls::{nnls, nnls_warm};
pub use quantile::{quantile_fit, quantile_fit_warm, QuantileSolution};
pub use sample::{sample_expectile, SortedSample};

/// Stop IRLS once no coefficient moves by more than this.
pub const COEFFICIENT_TOL: f64 = 1e-8;
/// Iteration cap for IRLS.
pub const MAX_IRLS_ITERATIONS: usize = 100;
/// Relative size below which a scaled pivot or singular value counts as zero.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("design has {rows} rows but response has {len} entries")]
    DimensionMismatch { rows: usize, len: usize },
    #[error("design has {rows} rows and {cols} columns; need rows >= columns")]
    Underdetermined { rows: usize, cols: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("asymmetry level {0} is outside (0, 1)")]
    LevelOutOfRange(f64),
    #[error("no convergence after {iterations} iterations")]
    NoConvergence { iterations: usize, last: Box<WeightVector> },
    #[error("sample is empty")]
    EmptySample,
    #[error("linear program is unbounded or numerically singular: {0}")]
    Numerical(String),
}

/// Regressor matrix: one row per observation, finite entries only.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix(DMatrix<f64>);

impl DesignMatrix {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self, SolverError> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::NonFinite("design matrix"));
        }
        Ok(Self(matrix))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, SolverError> {
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(SolverError::DimensionMismatch {
                rows: rows.len(),
                len: ncols,
            });
        }
        Self::new(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
    }

    pub fn from_row_major(nrows: usize, ncols: usize, data: &[f64]) -> Result<Self, SolverError> {
        if data.len() != nrows * ncols {
            return Err(SolverError::DimensionMismatch {
                rows: nrows,
                len: data.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(nrows, ncols, data))
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.0.row(i).iter().copied().collect()
    }

    /// `X w`.
    pub fn fitted(&self, coefficients: &[f64]) -> Vec<f64> {
        (&self.0 * DVector::from_column_slice(coefficients))
            .iter()
            .copied()
            .collect()
    }

    fn residuals(&self, y: &[f64], coefficients: &[f64]) -> Vec<f64> {
        self.fitted(coefficients)
            .into_iter()
            .zip(y)
            .map(|(f, y)| y - f)
            .collect()
    }
}

/// Estimated coefficients for one asymmetry level.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    level: f64,
    coefficients: Vec<f64>,
}

impl WeightVector {
    pub fn new(level: f64, coefficients: Vec<f64>) -> Result<Self, SolverError> {
        check_level(level)?;
        Ok(Self { level, coefficients })
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Dot product with one regressor row.
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.coefficients.iter().zip(row).map(|(w, x)| w * x).sum()
    }
}

fn check_level(level: f64) -> Result<(), SolverError> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(SolverError::LevelOutOfRange(level))
    }
}

fn check_problem(x: &DesignMatrix, y: &[f64]) -> Result<(), SolverError> {
    if x.nrows() != y.len() {
        return Err(SolverError::DimensionMismatch {
            rows: x.nrows(),
            len: y.len(),
        });
    }
    if x.nrows() < x.ncols() {
        return Err(SolverError::Underdetermined {
            rows: x.nrows(),
            cols: x.ncols(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::NonFinite("response"));
    }
    Ok(())
}

/// Asymmetric squared loss of one residual `r = y - fit`.
pub fn expectile_loss(r: f64, tau: f64) -> f64 {
    if r >= 0.0 {
        tau * r * r
    } else {
        (1.0 - tau) * r * r
    }
}

/// Asymmetric absolute (check) loss of one residual `r = y - fit`.
pub fn check_loss(r: f64, alpha: f64) -> f64 {
    if r >= 0.0 {
        alpha * r
    } else {
        (alpha - 1.0) * r
    }
}

pub fn expectile_objective(x: &DesignMatrix, y: &[f64], coefficients: &[f64], tau: f64) -> f64 {
    x.residuals(y, coefficients)
        .into_iter()
        .map(|r| expectile_loss(r, tau))
        .sum()
}

pub fn quantile_objective(x: &DesignMatrix, y: &[f64], coefficients: &[f64], alpha: f64) -> f64 {
    x.residuals(y, coefficients)
        .into_iter()
        .map(|r| check_loss(r, alpha))
        .sum()
}

pub(crate) struct LeastSquares {
    pub coefficients: Vec<f64>,
    pub rank: usize,
}

/// Least squares via Householder QR on unit-norm columns, falling back to a
/// truncated SVD (minimum-norm solution) when the design is rank deficient.
pub(crate) fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> LeastSquares {
    let (n, p) = a.shape();
    let norms: Vec<f64> = (0..p).map(|j| a.column(j).norm()).collect();
    let active: Vec<usize> = (0..p).filter(|&j| norms[j] > 0.0).collect();
    let mut coefficients = vec![0.0; p];
    if active.is_empty() || n == 0 {
        return LeastSquares { coefficients, rank: 0 };
    }
    let k = active.len();
    let scaled = DMatrix::from_fn(n, k, |i, j| a[(i, active[j])] / norms[active[j]]);

    let mut rank = k;
    let mut full = None;
    if n >= k {
        let qr = scaled.clone().qr();
        let r = qr.r();
        let diag: Vec<f64> = (0..k).map(|i| r[(i, i)].abs()).collect();
        let max_d = diag.iter().cloned().fold(0.0, f64::max);
        if diag.iter().all(|&d| d > RANK_TOL * max_d) {
            let mut qtb = b.clone();
            qr.q_tr_mul(&mut qtb);
            full = r.solve_upper_triangular(&qtb.rows(0, k).into_owned());
        }
    }
    let x = match full {
        Some(x) => x,
        None => {
            let (x, r) = min_norm_solve(&scaled, b, RANK_TOL);
            rank = r;
            x
        }
    };
    for (j, &col) in active.iter().enumerate() {
        coefficients[col] = x[j] / norms[col];
    }
    LeastSquares { coefficients, rank }
}

/// Minimum-norm least-squares solution of `a x = b` and the numerical rank,
/// by complete orthogonal decomposition: a column-pivoted QR of `a`, then a
/// QR of the leading `rank` rows of its triangular factor, transposed.
/// Pivots below `rel_tol` times the largest one count as zero.
pub(crate) fn min_norm_solve(a: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> (DVector<f64>, usize) {
    let (m, k) = a.shape();
    let qr = a.clone().col_piv_qr();
    let r = qr.r();
    let d = m.min(k);
    let max_pivot = (0..d).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    let rank = (0..d).take_while(|&i| r[(i, i)].abs() > rel_tol * max_pivot).count();
    if rank == 0 {
        return (DVector::zeros(k), 0);
    }
    let mut qtb = b.clone();
    qr.q_tr_mul(&mut qtb);
    let c = qtb.rows(0, rank).into_owned();
    let t = r.rows(0, rank).into_owned();
    let z = if rank == k {
        t.solve_upper_triangular(&c)
    } else {
        let qr2 = t.transpose().qr();
        qr2.r().transpose().solve_lower_triangular(&c).map(|u| qr2.q() * u)
    };
    let mut x = z.unwrap_or_else(|| DVector::zeros(k));
    qr.p().inv_permute_rows(&mut x);
    (x, rank)
}

/// Ordinary least squares.
///
/// Rank-deficient designs are solved in the minimum-norm sense (on
/// unit-norm columns) and a warning is logged.
pub fn ols_fit(x: &DesignMatrix, y: &[f64]) -> Result<Vec<f64>, SolverError> {
    let (coefficients, rank) = ols_fit_with_rank(x, y)?;
    if rank < x.ncols() {
        log::warn!(
            "rank-deficient design ({} of {} columns independent); using minimum-norm solution",
            rank,
            x.ncols()
        );
    }
    Ok(coefficients)
}

/// OLS returning the numerical rank alongside the coefficients, for callers
/// whose designs are rank deficient by construction.
pub fn ols_fit_with_rank(x: &DesignMatrix, y: &[f64]) -> Result<(Vec<f64>, usize), SolverError> {
    check_problem(x, y)?;
    let fit = least_squares(x.matrix(), &DVector::from_column_slice(y));
    Ok((fit.coefficients, fit.rank))
}

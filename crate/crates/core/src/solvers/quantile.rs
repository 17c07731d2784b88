use nalgebra::{DMatrix, DVector};

use super::{check_level, check_problem, least_squares, DesignMatrix, SolverError, WeightVector};

/// Relative residual norm under which a column (or row) counts as dependent.
const DEPENDENCE_TOL: f64 = 1e-9;

/// Solution of a quantile regression together with the basic observations
/// (rows fitted exactly), reusable as a warm start at a neighbouring level.
#[derive(Debug, Clone)]
pub struct QuantileSolution {
    pub weights: WeightVector,
    pub basis: Vec<usize>,
}

/// Quantile regression at level `alpha`, solved exactly.
pub fn quantile_fit(x: &DesignMatrix, y: &[f64], alpha: f64) -> Result<WeightVector, SolverError> {
    quantile_fit_warm(x, y, alpha, None).map(|s| s.weights)
}

/// Exact quantile regression by descent over the vertices of the check-loss
/// objective.
///
/// A vertex is a set of `k` observations fitted exactly, `k` being the
/// number of linearly independent columns (dependent columns get weight
/// zero). At each vertex the directional derivatives along the `2k` edges
/// are computed; the steepest descending edge is followed to the kink where
/// the slope turns non-negative, which swaps one observation in the basis.
/// The objective strictly decreases, so the search ends at an optimal vertex.
pub fn quantile_fit_warm(
    x: &DesignMatrix,
    y: &[f64],
    alpha: f64,
    basis_hint: Option<&[usize]>,
) -> Result<QuantileSolution, SolverError> {
    check_level(alpha)?;
    check_problem(x, y)?;
    let m = x.matrix();
    let (n, p) = m.shape();
    let cols = independent_columns(m);
    let k = cols.len();
    if k == 0 {
        return Ok(QuantileSolution {
            weights: WeightVector::new(alpha, vec![0.0; p])?,
            basis: Vec::new(),
        });
    }
    let norms: Vec<f64> = cols.iter().map(|&j| m.column(j).norm()).collect();
    let s = DMatrix::from_fn(n, k, |i, j| m[(i, cols[j])] / norms[j]);
    let y_scale = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let ztol = 1e-11 * if y_scale > 0.0 { y_scale } else { 1.0 };

    let mut basis = match basis_hint {
        Some(h) if valid_basis(&s, h) => h.to_vec(),
        _ => initial_basis(&s, y)?,
    };
    let to_weights = |w: &DVector<f64>| -> Vec<f64> {
        let mut out = vec![0.0; p];
        for (j, &c) in cols.iter().enumerate() {
            out[c] = w[j] / norms[j];
        }
        out
    };

    let max_iter = 20 * n + 100;
    let mut w = DVector::zeros(k);
    for _ in 0..max_iter {
        let b = DMatrix::from_fn(k, k, |r, c| s[(basis[r], c)]);
        let binv = b
            .try_inverse()
            .ok_or_else(|| SolverError::Numerical("singular basis".into()))?;
        w = &binv * DVector::from_fn(k, |r, _| y[basis[r]]);
        let fitted = &s * &w;
        let mut in_basis = vec![false; n];
        for &h in &basis {
            in_basis[h] = true;
        }
        let r: Vec<f64> = (0..n)
            .map(|i| {
                let v = y[i] - fitted[i];
                if in_basis[i] || v.abs() <= ztol {
                    0.0
                } else {
                    v
                }
            })
            .collect();
        // column j of `a` is the change in fit per unit move along edge j
        let a = &s * &binv;

        let mut best: Option<(f64, usize, f64, f64)> = None;
        for j in 0..k {
            let (mut plus, mut minus, mut mass) = (1.0 - alpha, alpha, 1.0);
            for i in (0..n).filter(|&i| !in_basis[i]) {
                let aij = a[(i, j)];
                mass += aij.abs();
                plus += directional(r[i], -aij, alpha);
                minus += directional(r[i], aij, alpha);
            }
            let tol = 1e-12 * mass;
            for (slope, sign) in [(plus, 1.0), (minus, -1.0)] {
                if slope < -tol && best.is_none_or(|(b, ..)| slope < b) {
                    best = Some((slope, j, sign, tol));
                }
            }
        }
        let Some((slope0, j, sign, tol)) = best else {
            return Ok(QuantileSolution {
                weights: WeightVector::new(alpha, to_weights(&w))?,
                basis,
            });
        };

        // residual i moves at rate b_i = -sign * a_ij and turns sign at -r_i / b_i
        let bmax = (0..n)
            .filter(|&i| !in_basis[i])
            .fold(0.0f64, |acc, i| acc.max(a[(i, j)].abs()));
        let mut kinks: Vec<(f64, usize, f64)> = (0..n)
            .filter(|&i| !in_basis[i] && r[i] != 0.0)
            .filter_map(|i| {
                let bi = -sign * a[(i, j)];
                (r[i] * bi < 0.0 && bi.abs() > 1e-13 * bmax).then(|| (-r[i] / bi, i, bi.abs()))
            })
            .collect();
        kinks.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        let mut slope = slope0;
        let mut entering = None;
        for (_, i, ab) in kinks {
            slope += ab;
            if slope >= -tol {
                entering = Some(i);
                break;
            }
        }
        let i = entering.ok_or_else(|| SolverError::Numerical("unbounded descent edge".into()))?;
        basis[j] = i;
    }
    Err(SolverError::NoConvergence {
        iterations: max_iter,
        last: Box::new(WeightVector::new(alpha, to_weights(&w))?),
    })
}

/// Right derivative of the check loss at residual `r` moving at rate `b`.
fn directional(r: f64, b: f64, alpha: f64) -> f64 {
    if r > 0.0 || (r == 0.0 && b > 0.0) {
        alpha * b
    } else {
        (alpha - 1.0) * b
    }
}

/// Columns kept by modified Gram-Schmidt on unit-norm columns.
fn independent_columns(m: &DMatrix<f64>) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut keep = Vec::new();
    for j in 0..m.ncols() {
        let norm = m.column(j).norm();
        if norm == 0.0 {
            continue;
        }
        let mut v = m.column(j) / norm;
        for q in &basis {
            let d = q.dot(&v);
            v -= q * d;
        }
        let rest = v.norm();
        if rest > DEPENDENCE_TOL {
            basis.push(v / rest);
            keep.push(j);
        }
    }
    keep
}

fn valid_basis(s: &DMatrix<f64>, hint: &[usize]) -> bool {
    let (n, k) = s.shape();
    if hint.len() != k || hint.iter().any(|&i| i >= n) {
        return false;
    }
    let mut seen = hint.to_vec();
    seen.sort_unstable();
    seen.dedup();
    seen.len() == k && independent_rows(s, hint).len() == k
}

fn independent_rows(s: &DMatrix<f64>, order: &[usize]) -> Vec<usize> {
    let k = s.ncols();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut keep = Vec::new();
    for &i in order {
        let row = s.row(i).transpose();
        let norm = row.norm();
        if norm == 0.0 {
            continue;
        }
        let mut v = row / norm;
        for q in &basis {
            let d = q.dot(&v);
            v -= q * d;
        }
        let rest = v.norm();
        if rest > DEPENDENCE_TOL {
            basis.push(v / rest);
            keep.push(i);
            if keep.len() == k {
                break;
            }
        }
    }
    keep
}

/// Start from the observations closest to the least-squares fit.
fn initial_basis(s: &DMatrix<f64>, y: &[f64]) -> Result<Vec<usize>, SolverError> {
    let n = s.nrows();
    let ls = least_squares(s, &DVector::from_column_slice(y));
    let fitted = s * DVector::from_vec(ls.coefficients);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        (y[a] - fitted[a])
            .abs()
            .total_cmp(&(y[b] - fitted[b]).abs())
            .then(a.cmp(&b))
    });
    let rows = independent_rows(s, &order);
    if rows.len() < s.ncols() {
        return Err(SolverError::Numerical("no independent starting rows".into()));
    }
    Ok(rows)
}

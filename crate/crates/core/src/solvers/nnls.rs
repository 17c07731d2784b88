use nalgebra::{DMatrix, DVector};

use super::{least_squares, SolverError};

/// Non-negative least squares, `min ||A x - b||` subject to `x >= 0`
/// (Lawson-Hanson active set).
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, SolverError> {
    nnls_warm(a, b, &[])
}

/// [`nnls`] starting from the passive set `initial` (for instance the
/// support of a previous solution of a nearby problem).
pub fn nnls_warm(a: &DMatrix<f64>, b: &DVector<f64>, initial: &[usize]) -> Result<DVector<f64>, SolverError> {
    let (m, n) = a.shape();
    if b.len() != m {
        return Err(SolverError::DimensionMismatch { rows: m, len: b.len() });
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(SolverError::NonFinite("nnls input"));
    }
    let norm1 = (0..n).map(|j| a.column(j).lp_norm(1)).fold(0.0, f64::max);
    let tol = 10.0 * f64::EPSILON * norm1 * m.max(n) as f64;
    let max_iter = 30 * n.max(10);

    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let mut iterations = 0;

    let gradient = |x: &DVector<f64>| a.transpose() * (b - a * x);
    let solve_passive = |passive: &[bool]| -> DVector<f64> {
        let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        let sub = DMatrix::from_fn(m, idx.len(), |i, c| a[(i, idx[c])]);
        let sol = least_squares(&sub, b).coefficients;
        let mut z = DVector::zeros(n);
        for (c, &j) in idx.iter().enumerate() {
            z[j] = sol[c];
        }
        z
    };
    // drives x from its current feasible value to the passive-set solution,
    // dropping coordinates that hit zero on the way
    let mut settle = |x: &mut DVector<f64>, passive: &mut [bool], mut z: DVector<f64>| -> Result<(), SolverError> {
        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(SolverError::Numerical("nnls iteration limit".into()));
            }
            if (0..n).filter(|&j| passive[j]).all(|j| z[j] > tol) {
                *x = z;
                return Ok(());
            }
            let step = (0..n)
                .filter(|&j| passive[j] && z[j] <= tol)
                .map(|j| x[j] / (x[j] - z[j]))
                .fold(f64::INFINITY, f64::min);
            *x += (&z - &*x) * step;
            for j in 0..n {
                if passive[j] && x[j] <= tol {
                    passive[j] = false;
                    x[j] = 0.0;
                }
            }
            z = solve_passive(passive);
        }
    };

    if initial.iter().any(|&j| j < n) {
        for &j in initial.iter().filter(|&&j| j < n) {
            passive[j] = true;
        }
        let z = solve_passive(&passive);
        settle(&mut x, &mut passive, z)?;
    }

    let mut w = gradient(&x);
    // coordinates whose entry would immediately be rejected; cleared on progress
    let mut excluded = vec![false; n];
    loop {
        let candidate = (0..n)
            .filter(|&j| !passive[j] && !excluded[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(t) = candidate else { break };
        passive[t] = true;
        let z = solve_passive(&passive);
        if z[t] <= tol {
            passive[t] = false;
            excluded[t] = true;
            continue;
        }
        settle(&mut x, &mut passive, z)?;
        excluded.fill(false);
        w = gradient(&x);
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_optimum_inside_the_orthant() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let x = nnls(&a, &b).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn clamps_negative_coordinates() {
        let a = DMatrix::identity(2, 2);
        let b = DVector::from_vec(vec![-1.0, 4.0]);
        let x = nnls(&a, &b).unwrap();
        assert_eq!(x[0], 0.0);
        assert!((x[1] - 4.0).abs() < 1e-12);
    }

    fn assert_kkt(a: &DMatrix<f64>, b: &DVector<f64>, x: &DVector<f64>) {
        let g = a.transpose() * (b - a * x);
        for j in 0..x.len() {
            assert!(x[j] >= 0.0);
            assert!(g[j] <= 1e-9);
            if x[j] > 0.0 {
                assert!(g[j].abs() < 1e-9);
            }
        }
    }

    #[test]
    fn satisfies_kkt_conditions() {
        let a = DMatrix::from_fn(8, 4, |i, j| ((i * 7 + j * 3) % 5) as f64 - 1.5);
        let b = DVector::from_fn(8, |i, _| (i as f64).sin());
        let x = nnls(&a, &b).unwrap();
        assert_kkt(&a, &b, &x);
    }

    #[test]
    fn warm_start_reaches_the_same_solution() {
        let a = DMatrix::from_fn(12, 6, |i, j| ((i * 5 + j * 7) % 11) as f64 - 4.0);
        let b = DVector::from_fn(12, |i, _| (i as f64 * 0.7).cos());
        let cold = nnls(&a, &b).unwrap();
        for start in [vec![], vec![0, 1, 2, 3, 4, 5], vec![2, 5], vec![1]] {
            let warm = nnls_warm(&a, &b, &start).unwrap();
            assert_kkt(&a, &b, &warm);
            assert!((&warm - &cold).amax() < 1e-9);
        }
    }
}

use nalgebra::{DMatrix, DVector};

use super::{
    check_level, check_problem, expectile_objective, least_squares, DesignMatrix, SolverError, WeightVector,
    COEFFICIENT_TOL, MAX_IRLS_ITERATIONS,
};

/// Result of an IRLS run with the objective value after every iteration.
#[derive(Debug, Clone)]
pub struct IrlsTrace {
    pub weights: WeightVector,
    pub iterations: usize,
    /// Objective at the start point followed by one entry per iteration.
    pub objective: Vec<f64>,
}

/// Expectile regression at level `tau` by iteratively reweighted least squares.
pub fn expectile_fit(x: &DesignMatrix, y: &[f64], tau: f64) -> Result<WeightVector, SolverError> {
    expectile_fit_traced(x, y, tau, None).map(|t| t.weights)
}

/// IRLS with an optional warm start (OLS otherwise).
///
/// Each iteration solves the weighted least-squares problem with weights
/// `tau` / `1 - tau` for non-negative / negative residuals and backtracks
/// along the step until the objective does not increase.
pub fn expectile_fit_traced(
    x: &DesignMatrix,
    y: &[f64],
    tau: f64,
    start: Option<&[f64]>,
) -> Result<IrlsTrace, SolverError> {
    check_level(tau)?;
    check_problem(x, y)?;
    let m = x.matrix();
    let (n, p) = m.shape();
    let mut w = match start {
        Some(s) if s.len() == p && s.iter().all(|v| v.is_finite()) => s.to_vec(),
        _ => least_squares(m, &DVector::from_column_slice(y)).coefficients,
    };
    let mut obj = expectile_objective(x, y, &w, tau);
    let mut objective = vec![obj];
    // residual signs behind the last full step; seeing them again means
    // the next weighted solve reproduces `w`
    let mut fixed_pattern: Option<Vec<bool>> = None;

    for iteration in 1..=MAX_IRLS_ITERATIONS {
        let fitted = x.fitted(&w);
        let pattern: Vec<bool> = fitted.iter().zip(y).map(|(f, y)| y - f >= 0.0).collect();
        if fixed_pattern.as_ref() == Some(&pattern) {
            return Ok(IrlsTrace {
                weights: WeightVector::new(tau, w)?,
                iterations: iteration - 1,
                objective,
            });
        }
        let sqrt_w: Vec<f64> = pattern
            .iter()
            .map(|&above| if above { tau.sqrt() } else { (1.0 - tau).sqrt() })
            .collect();
        let xw = DMatrix::from_fn(n, p, |i, j| sqrt_w[i] * m[(i, j)]);
        let yw = DVector::from_fn(n, |i, _| sqrt_w[i] * y[i]);
        let target = least_squares(&xw, &yw).coefficients;

        let mut step = 1.0;
        let mut accepted = None;
        for halvings in 0..40 {
            let cand: Vec<f64> = w.iter().zip(&target).map(|(a, b)| a + step * (b - a)).collect();
            let f = expectile_objective(x, y, &cand, tau);
            if f <= obj + 1e-14 * obj.abs() {
                accepted = Some((cand, f));
                fixed_pattern = (halvings == 0).then(|| pattern.clone());
                break;
            }
            step *= 0.5;
        }
        let Some((cand, f)) = accepted else {
            // no descent direction left at working precision
            objective.push(obj);
            return Ok(IrlsTrace {
                weights: WeightVector::new(tau, w)?,
                iterations: iteration,
                objective,
            });
        };
        let change = w.iter().zip(&cand).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let stalled = f >= obj;
        w = cand;
        obj = f;
        objective.push(obj);
        if change < COEFFICIENT_TOL || stalled {
            return Ok(IrlsTrace {
                weights: WeightVector::new(tau, w)?,
                iterations: iteration,
                objective,
            });
        }
    }
    Err(SolverError::NoConvergence {
        iterations: MAX_IRLS_ITERATIONS,
        last: Box::new(WeightVector::new(tau, w)?),
    })
}

use super::{DistributionError, ExpectileCurve, LevelGrid, QuantileCurve};
use crate::solvers::SortedSample;

/// Negated errors `P - P_hat`, sorted, so that levels ascend with price.
fn shifted_sample(errors: &[f64]) -> Result<SortedSample, DistributionError> {
    if errors.is_empty() {
        return Err(DistributionError::EmptySample);
    }
    if errors.iter().any(|e| !e.is_finite()) {
        return Err(DistributionError::NonFinite);
    }
    let negated: Vec<f64> = errors.iter().map(|e| -e).collect();
    SortedSample::new(&negated).map_err(|_| DistributionError::EmptySample)
}

/// Historical simulation in quantile coordinates.
///
/// `errors` are past out-of-sample errors `P_hat - P`. The curve value at
/// level `a` is `point_forecast + q_a(P - P_hat)`.
pub fn historical_sim_quantiles(
    point_forecast: f64,
    errors: &[f64],
    grid: &LevelGrid,
) -> Result<QuantileCurve, DistributionError> {
    let sample = shifted_sample(errors)?;
    let values = grid
        .levels()
        .iter()
        .map(|&a| point_forecast + sample.quantile(a))
        .collect();
    Ok(QuantileCurve::new(grid.clone(), values)?.repaired())
}

/// Historical simulation in expectile coordinates: `point_forecast + e_tau(P - P_hat)`.
pub fn historical_sim_expectiles(
    point_forecast: f64,
    errors: &[f64],
    grid: &LevelGrid,
) -> Result<ExpectileCurve, DistributionError> {
    let sample = shifted_sample(errors)?;
    let values = grid
        .levels()
        .iter()
        .map(|&t| point_forecast + sample.expectile(t))
        .collect();
    Ok(ExpectileCurve::new(grid.clone(), values)?.repaired())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn zero_residuals_give_a_flat_curve() {
        let grid = LevelGrid::percentiles();
        let q = historical_sim_quantiles(42.0, &[0.0; 50], &grid).unwrap();
        assert!(q.values().iter().all(|&v| v == 42.0));
        let e = historical_sim_expectiles(42.0, &[0.0; 50], &LevelGrid::expectile_default()).unwrap();
        assert!(e.values().iter().all(|&v| v == 42.0));
    }

    #[test]
    fn symmetric_residuals_median_is_the_point_forecast() {
        let mut errors = vec![-1.0; 500];
        errors.extend(vec![1.0; 500]);
        let grid = LevelGrid::new(vec![0.25, 0.5, 0.75]).unwrap();
        let q = historical_sim_quantiles(10.0, &errors, &grid).unwrap();
        assert_eq!(q.value_at(0.5).unwrap(), 10.0);
        let e = historical_sim_expectiles(10.0, &errors, &grid).unwrap();
        assert!((e.value_at(0.5).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn normal_residuals_recover_the_95_percent_quantile() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let errors: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let q = historical_sim_quantiles(3.0, &errors, &LevelGrid::percentiles()).unwrap();
        let v = q.value_at(0.95).unwrap();
        assert!((v - (3.0 + 1.6449)).abs() < 0.05, "{v}");
    }

    #[test]
    fn two_point_centered_residuals_follow_the_closed_form() {
        // P - P_hat takes values -0.5 and 0.5, so e_tau = tau - 0.5
        let mut errors = vec![0.5; 100];
        errors.extend(vec![-0.5; 100]);
        let grid = LevelGrid::expectile_default();
        let e = historical_sim_expectiles(7.0, &errors, &grid).unwrap();
        for (t, v) in grid.levels().iter().zip(e.values()) {
            assert!((v - (7.0 + t - 0.5)).abs() < 1e-9, "tau {t}: {v}");
        }
    }

    #[test]
    fn sign_convention_puts_high_levels_above_the_forecast() {
        // forecasts that were too low (negative errors) push the upper quantiles up
        let errors = vec![-2.0, -1.0, 0.0, -3.0, -4.0];
        let q = historical_sim_quantiles(0.0, &errors, &LevelGrid::percentiles()).unwrap();
        assert!(q.value_at(0.99).unwrap() > 3.9);
        assert!(q.value_at(0.01).unwrap() >= 0.0 - 1e-12);
    }

    #[test]
    fn empty_sample_is_an_error() {
        assert_eq!(
            historical_sim_quantiles(0.0, &[], &LevelGrid::percentiles()).unwrap_err(),
            DistributionError::EmptySample
        );
    }
}

//! Variance-stabilizing transform: prices are normalized per hour with the
//! calibration-window mean and standard deviation, then passed through
//! `asinh`. Predictive distributions are brought back to the price scale by
//! simulating scenarios from the transformed-scale quantile curve and
//! mapping each scenario through `sinh`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::distribution::{sorted_quantile, LevelGrid, QuantileCurve};

pub const DEFAULT_SCENARIOS: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("degenerate calibration window: standard deviation {0} is not positive")]
    DegenerateWindow(f64),
    #[error("need at least two prices to estimate normalization statistics, got {0}")]
    TooFewPrices(usize),
    #[error("non-finite normalization statistic")]
    NonFinite,
    #[error("quantile curve is not monotone")]
    NotMonotone,
    #[error("scenario count must be positive")]
    NoScenarios,
}

/// Mean and standard deviation of one hour's prices over a calibration window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationStats {
    mu: f64,
    sigma: f64,
}

impl NormalizationStats {
    pub fn new(mu: f64, sigma: f64) -> Result<Self, TransformError> {
        if !mu.is_finite() || !sigma.is_finite() {
            return Err(TransformError::NonFinite);
        }
        if sigma <= 0.0 {
            return Err(TransformError::DegenerateWindow(sigma));
        }
        Ok(Self { mu, sigma })
    }

    /// `mu = 0`, `sigma = 1`.
    pub fn identity() -> Self {
        Self { mu: 0.0, sigma: 1.0 }
    }

    /// Sample mean and unbiased standard deviation.
    pub fn from_sample(prices: &[f64]) -> Result<Self, TransformError> {
        let n = prices.len();
        if n < 2 {
            return Err(TransformError::TooFewPrices(n));
        }
        let mu = prices.iter().sum::<f64>() / n as f64;
        let var = prices.iter().map(|p| (p - mu).powi(2)).sum::<f64>() / (n - 1) as f64;
        Self::new(mu, var.sqrt())
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// `asinh((p - mu) / sigma)`.
pub fn asinh_transform(price: f64, stats: &NormalizationStats) -> f64 {
    ((price - stats.mu) / stats.sigma).asinh()
}

/// `sigma * sinh(x) + mu`.
pub fn sinh_invert(x: f64, stats: &NormalizationStats) -> f64 {
    stats.sigma * x.sinh() + stats.mu
}

/// Scenario count and seed for Monte Carlo inversion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McConfig {
    n_scenarios: usize,
    seed: u64,
}

impl McConfig {
    pub fn new(n_scenarios: usize, seed: u64) -> Result<Self, TransformError> {
        if n_scenarios == 0 {
            return Err(TransformError::NoScenarios);
        }
        Ok(Self { n_scenarios, seed })
    }

    pub fn n_scenarios(&self) -> usize {
        self.n_scenarios
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Configuration with a seed mixed from this seed and `keys`, so that
    /// independent cells (day, hour, method) draw independent streams.
    pub fn derive(&self, keys: &[u64]) -> Self {
        let seed = keys
            .iter()
            .fold(splitmix(self.seed), |acc, &k| splitmix(acc ^ splitmix(k)));
        Self { seed, ..*self }
    }
}

fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Monte Carlo inversion of a transformed-scale quantile curve.
///
/// Scenarios are drawn by inverse-transform sampling from `curve` (linear
/// between grid levels, clamped at the outermost levels), mapped through
/// [`sinh_invert`], and summarized by empirical quantiles on `target`.
pub fn invert_distribution(
    curve: &QuantileCurve,
    stats: &NormalizationStats,
    cfg: &McConfig,
    target: &LevelGrid,
) -> Result<QuantileCurve, TransformError> {
    if !curve.is_monotone() {
        return Err(TransformError::NotMonotone);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut scenarios: Vec<f64> = (0..cfg.n_scenarios)
        .map(|_| sinh_invert(curve.interpolate(rng.random::<f64>()), stats))
        .collect();
    scenarios.sort_by(f64::total_cmp);
    let values = target
        .levels()
        .iter()
        .map(|&a| sorted_quantile(&scenarios, a))
        .collect();
    QuantileCurve::new(target.clone(), values).map_err(|_| TransformError::NonFinite)
}

/// Maps each grid value through [`sinh_invert`]; exact for quantiles
/// because `sinh` is increasing.
pub fn invert_quantiles_direct(curve: &QuantileCurve, stats: &NormalizationStats) -> QuantileCurve {
    curve.map_values(|v| sinh_invert(v, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn closed_forms() {
        let s = NormalizationStats::new(50.0, 20.0).unwrap();
        assert_eq!(asinh_transform(50.0, &s), 0.0);
        assert!((asinh_transform(70.0, &s) - 0.881374).abs() < 1e-6);
        assert_eq!(sinh_invert(0.0, &s), 50.0);
        assert!((sinh_invert(0.881374, &s) - 70.0).abs() < 1e-6 * 20.0);
    }

    #[test]
    fn large_arguments_stay_finite() {
        let s = NormalizationStats::new(40.0, 15.0).unwrap();
        for x in [-20.0, 20.0] {
            assert!(sinh_invert(x, &s).is_finite());
        }
    }

    #[test]
    fn degenerate_statistics() {
        assert_eq!(
            NormalizationStats::new(1.0, 0.0).unwrap_err(),
            TransformError::DegenerateWindow(0.0)
        );
        assert!(matches!(
            NormalizationStats::from_sample(&[5.0, 5.0, 5.0]),
            Err(TransformError::DegenerateWindow(_))
        ));
        assert_eq!(
            NormalizationStats::from_sample(&[5.0]).unwrap_err(),
            TransformError::TooFewPrices(1)
        );
    }

    #[test]
    fn unbiased_standard_deviation() {
        let s = NormalizationStats::from_sample(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mu(), 2.5);
        assert!((s.sigma() - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn flat_curve_inverts_to_a_point() {
        let s = NormalizationStats::new(30.0, 10.0).unwrap();
        let curve = QuantileCurve::flat(LevelGrid::percentiles(), 0.7).unwrap();
        let cfg = McConfig::new(500, 1).unwrap();
        let out = invert_distribution(&curve, &s, &cfg, &LevelGrid::percentiles()).unwrap();
        let v = sinh_invert(0.7, &s);
        assert!(out.values().iter().all(|&x| x == v));
    }

    #[test]
    fn monte_carlo_agrees_with_direct_map() {
        let grid = LevelGrid::percentiles();
        let values = grid.levels().iter().map(|&a| 3.0 * (a - 0.5)).collect();
        let curve = QuantileCurve::new(grid.clone(), values).unwrap();
        let s = NormalizationStats::identity();
        let cfg = McConfig::new(100_000, 7).unwrap();
        let mc = invert_distribution(&curve, &s, &cfg, &grid).unwrap();
        let direct = invert_quantiles_direct(&curve, &s);
        assert!(mc.is_monotone());
        for (i, &a) in grid.levels().iter().enumerate() {
            if !(0.02..=0.98).contains(&a) {
                continue;
            }
            // standard error of an empirical quantile: sqrt(a(1-a)/n) / density,
            // density of the linear curve on the sinh scale = 1 / (3 cosh(x))
            let x = 3.0 * (a - 0.5);
            let se = (a * (1.0 - a) / 100_000.0).sqrt() * 3.0 * x.cosh();
            let d = (mc.values()[i] - direct.values()[i]).abs();
            assert!(d <= 3.0 * se + 1e-9, "level {a}: {d} vs se {se}");
        }
    }

    #[test]
    fn seeded_inversion_is_reproducible() {
        let grid = LevelGrid::percentiles();
        let values = grid.levels().iter().map(|&a| a * a).collect();
        let curve = QuantileCurve::new(grid.clone(), values).unwrap();
        let s = NormalizationStats::new(10.0, 2.0).unwrap();
        let cfg = McConfig::new(2000, 99).unwrap().derive(&[3, 14, 1]);
        let a = invert_distribution(&curve, &s, &cfg, &grid).unwrap();
        let b = invert_distribution(&curve, &s, &cfg, &grid).unwrap();
        assert_eq!(a, b);
        assert_ne!(cfg.seed(), McConfig::new(2000, 99).unwrap().derive(&[3, 14, 2]).seed());
    }

    #[test]
    fn rejects_crossed_curve() {
        let grid = LevelGrid::new(vec![0.25, 0.5, 0.75]).unwrap();
        let curve = QuantileCurve::new(grid.clone(), vec![1.0, 0.0, 2.0]).unwrap();
        let cfg = McConfig::new(10, 0).unwrap();
        assert_eq!(
            invert_distribution(&curve, &NormalizationStats::identity(), &cfg, &grid).unwrap_err(),
            TransformError::NotMonotone
        );
    }

    proptest! {
        #[test]
        fn round_trip(p in -500.0f64..3000.0, mu in -50.0f64..200.0, sigma in 0.5f64..300.0) {
            let s = NormalizationStats::new(mu, sigma).unwrap();
            let back = sinh_invert(asinh_transform(p, &s), &s);
            prop_assert!((back - p).abs() <= 1e-9 * p.abs().max(1.0));
        }
    }
}

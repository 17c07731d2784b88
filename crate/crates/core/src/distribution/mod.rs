//! Predictive distributions in quantile and expectile coordinates.
//!
//! A predictive distribution is carried as a curve: a [`LevelGrid`] of
//! asymmetry levels in (0, 1) and one value per level. Expectile curves are
//! turned into quantile curves by recovering a discrete CDF whose implied
//! expectiles match the curve (see [`expectiles_to_quantiles`]).

mod convert;
mod hfunc;
mod hist;

use std::fmt;
use std::marker::PhantomData;
use std::sync::Arc;

use thiserror::Error;

pub use convert::{expectile_distribution, expectiles_to_quantiles, DistributionApproximation};
pub use hfunc::{h_level, LevelMoments};
pub use hist::{historical_sim_expectiles, historical_sim_quantiles};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistributionError {
    #[error("level grid is empty")]
    EmptyGrid,
    #[error("level {0} is outside (0, 1)")]
    LevelOutOfRange(f64),
    #[error("levels must be strictly increasing ({prev} then {next})")]
    NotIncreasing { prev: f64, next: f64 },
    #[error("curve has {values} values for {levels} levels")]
    LengthMismatch { values: usize, levels: usize },
    #[error("curve contains a non-finite value")]
    NonFinite,
    #[error("curve is not monotone at level {0}")]
    NotMonotone(f64),
    #[error("residual sample is empty")]
    EmptySample,
    #[error("conversion needs at least {needed} expectile levels, got {got}")]
    TooFewLevels { needed: usize, got: usize },
    #[error("level {0} is not on the grid")]
    MissingLevel(f64),
    #[error("degenerate distribution: {0}")]
    Degenerate(String),
    #[error("expectile to quantile conversion failed: {0}")]
    Conversion(String),
}

const LEVEL_MATCH_TOL: f64 = 1e-12;

/// Strictly increasing asymmetry levels in the open unit interval.
#[derive(Clone, PartialEq)]
pub struct LevelGrid(Arc<[f64]>);

impl fmt::Debug for LevelGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LevelGrid({} levels", self.0.len())?;
        if let (Some(a), Some(b)) = (self.0.first(), self.0.last()) {
            write!(f, ", {a}..{b}")?;
        }
        write!(f, ")")
    }
}

impl LevelGrid {
    pub fn new(levels: Vec<f64>) -> Result<Self, DistributionError> {
        if levels.is_empty() {
            return Err(DistributionError::EmptyGrid);
        }
        for &l in &levels {
            if !(l > 0.0 && l < 1.0) {
                return Err(DistributionError::LevelOutOfRange(l));
            }
        }
        for w in levels.windows(2) {
            if w[1] <= w[0] {
                return Err(DistributionError::NotIncreasing { prev: w[0], next: w[1] });
            }
        }
        Ok(Self(levels.into()))
    }

    /// Integer percentiles 1..=99.
    pub fn percentiles() -> Self {
        Self((1..=99).map(|k| k as f64 / 100.0).collect())
    }

    /// The expectile grid used for ERA and expectile historical simulation:
    /// dense tails (0.001 to 0.01 and 0.99 to 0.999) around a 0.02-step body.
    pub fn expectile_default() -> Self {
        let mut levels = vec![0.001, 0.0025, 0.005, 0.0075, 0.01];
        levels.extend((1..=49).map(|k| (2 * k) as f64 / 100.0));
        levels.extend([0.99, 0.9925, 0.995, 0.9975, 0.999]);
        Self(levels.into())
    }

    pub fn levels(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of `level` on the grid (matched to 1e-12).
    pub fn position(&self, level: f64) -> Option<usize> {
        self.0.iter().position(|l| (l - level).abs() <= LEVEL_MATCH_TOL)
    }
}

pub trait CurveKind: Copy + fmt::Debug + Send + Sync + 'static {
    const NAME: &'static str;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Quantile;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Expectile;

impl CurveKind for Quantile {
    const NAME: &'static str = "quantile";
}

impl CurveKind for Expectile {
    const NAME: &'static str = "expectile";
}

/// Level-to-value map describing a predictive distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve<K: CurveKind> {
    grid: LevelGrid,
    values: Vec<f64>,
    _kind: PhantomData<K>,
}

pub type QuantileCurve = Curve<Quantile>;
pub type ExpectileCurve = Curve<Expectile>;

impl<K: CurveKind> Curve<K> {
    /// Builds a curve; values must be finite but need not be monotone yet.
    pub fn new(grid: LevelGrid, values: Vec<f64>) -> Result<Self, DistributionError> {
        if values.len() != grid.len() {
            return Err(DistributionError::LengthMismatch {
                values: values.len(),
                levels: grid.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DistributionError::NonFinite);
        }
        Ok(Self {
            grid,
            values,
            _kind: PhantomData,
        })
    }

    /// Curve with the same value at every level.
    pub fn flat(grid: LevelGrid, value: f64) -> Result<Self, DistributionError> {
        let values = vec![value; grid.len()];
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &LevelGrid {
        &self.grid
    }

    pub fn levels(&self) -> &[f64] {
        self.grid.levels()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_monotone(&self) -> bool {
        self.values.windows(2).all(|w| w[0] <= w[1])
    }

    pub fn check_monotone(&self) -> Result<(), DistributionError> {
        match self.values.windows(2).position(|w| w[0] > w[1]) {
            Some(i) => Err(DistributionError::NotMonotone(self.grid.levels()[i + 1])),
            None => Ok(()),
        }
    }

    /// Rearranged copy with non-decreasing values.
    pub fn repaired(mut self) -> Self {
        self.values = repair_crossing(&self.values);
        self
    }

    /// Value at a level that lies on the grid.
    pub fn value_at(&self, level: f64) -> Result<f64, DistributionError> {
        self.grid
            .position(level)
            .map(|i| self.values[i])
            .ok_or(DistributionError::MissingLevel(level))
    }

    /// Linear interpolation in level, clamped to the outermost grid values.
    pub fn interpolate(&self, level: f64) -> f64 {
        let levels = self.grid.levels();
        let n = levels.len();
        if level <= levels[0] {
            return self.values[0];
        }
        if level >= levels[n - 1] {
            return self.values[n - 1];
        }
        let hi = levels.partition_point(|&l| l < level);
        let lo = hi - 1;
        let w = (level - levels[lo]) / (levels[hi] - levels[lo]);
        self.values[lo] + w * (self.values[hi] - self.values[lo])
    }

    /// Applies `f` to every value, keeping the grid.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            _kind: PhantomData,
        }
    }
}

/// Isotonic rearrangement of per-level values: the sorted values in level order.
pub fn repair_crossing(values: &[f64]) -> Vec<f64> {
    let mut out = values.to_vec();
    out.sort_by(f64::total_cmp);
    out
}

/// Sample quantile with linear interpolation between order statistics
/// (the "type 7" definition). `sorted` must be sorted ascending and non-empty.
pub fn sorted_quantile(sorted: &[f64], level: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = level.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grids() {
        let e = LevelGrid::expectile_default();
        assert_eq!(e.len(), 59);
        assert_eq!(e.levels()[0], 0.001);
        assert_eq!(e.levels()[58], 0.999);
        assert!(e.position(0.5).is_some());
        let p = LevelGrid::percentiles();
        assert_eq!(p.len(), 99);
        assert_eq!(p.position(0.05), Some(4));
        assert_eq!(p.position(0.95), Some(94));
    }

    #[test]
    fn grid_validation() {
        assert!(LevelGrid::new(vec![]).is_err());
        assert!(LevelGrid::new(vec![0.0, 0.5]).is_err());
        assert!(LevelGrid::new(vec![0.5, 0.5]).is_err());
        assert!(LevelGrid::new(vec![0.2, 0.1]).is_err());
    }

    #[test]
    fn repair_sorts_and_keeps_multiset() {
        assert_eq!(repair_crossing(&[3.0, 1.0, 2.0]), vec![1.0, 2.0, 3.0]);
        let mono = vec![1.0, 1.0, 2.5, 7.0];
        assert_eq!(repair_crossing(&mono), mono);
        let once = repair_crossing(&[5.0, -1.0, 2.0, 2.0]);
        assert_eq!(repair_crossing(&once), once);
    }

    #[test]
    fn interpolation_clamps_at_the_edges() {
        let grid = LevelGrid::new(vec![0.25, 0.5, 0.75]).unwrap();
        let c = QuantileCurve::new(grid, vec![1.0, 2.0, 4.0]).unwrap();
        assert_eq!(c.interpolate(0.1), 1.0);
        assert_eq!(c.interpolate(0.9), 4.0);
        assert!((c.interpolate(0.625) - 3.0).abs() < 1e-15);
        assert_eq!(c.value_at(0.5).unwrap(), 2.0);
        assert!(c.value_at(0.3).is_err());
    }

    #[test]
    fn type7_quantile() {
        let s: Vec<f64> = (1..=100).map(f64::from).collect();
        assert!((sorted_quantile(&s, 0.9) - 90.1).abs() < 1e-12);
        assert_eq!(sorted_quantile(&s, 0.0), 1.0);
        assert_eq!(sorted_quantile(&s, 1.0), 100.0);
    }
}

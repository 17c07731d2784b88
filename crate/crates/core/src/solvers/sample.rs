use super::{check_level, SolverError};
use crate::distribution::sorted_quantile;

/// A sorted sample with prefix sums, for repeated quantile and expectile queries.
#[derive(Debug, Clone)]
pub struct SortedSample {
    sorted: Vec<f64>,
    prefix: Vec<f64>,
}

impl SortedSample {
    pub fn new(values: &[f64]) -> Result<Self, SolverError> {
        if values.is_empty() {
            return Err(SolverError::EmptySample);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::NonFinite("sample"));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut prefix = Vec::with_capacity(sorted.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for v in &sorted {
            acc += v;
            prefix.push(acc);
        }
        Ok(Self { sorted, prefix })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.sorted
    }

    pub fn mean(&self) -> f64 {
        self.prefix[self.len()] / self.len() as f64
    }

    /// Type-7 sample quantile.
    pub fn quantile(&self, level: f64) -> f64 {
        sorted_quantile(&self.sorted, level)
    }

    /// Sample expectile: the root of
    /// `tau * sum (y - e)_+ = (1 - tau) * sum (e - y)_+`.
    ///
    /// The balance function is piecewise linear between order statistics, so
    /// the bracketing segment is found by bisection over the sorted values and
    /// the root is solved in closed form on it.
    pub fn expectile(&self, tau: f64) -> f64 {
        let n = self.len();
        let total = self.prefix[n];
        let balance = |i: usize| {
            let e = self.sorted[i];
            let below = self.prefix[i + 1];
            let above = total - below;
            let k = (i + 1) as f64;
            tau * (above - (n as f64 - k) * e) - (1.0 - tau) * (k * e - below)
        };
        // largest i with balance(i) >= 0; balance(0) >= 0 always
        let (mut lo, mut hi) = (0, n - 1);
        if balance(hi) >= 0.0 {
            return self.sorted[hi];
        }
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if balance(mid) >= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let k = lo + 1;
        let below = self.prefix[k];
        let above = total - below;
        let e = (tau * above + (1.0 - tau) * below) / (tau * (n - k) as f64 + (1.0 - tau) * k as f64);
        e.clamp(self.sorted[lo], self.sorted[hi])
    }
}

/// Sample expectile of `values` at level `tau`.
pub fn sample_expectile(values: &[f64], tau: f64) -> Result<f64, SolverError> {
    check_level(tau)?;
    Ok(SortedSample::new(values)?.expectile(tau))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Bisection on the balance function evaluated by brute force.
    fn expectile_oracle(y: &[f64], tau: f64) -> f64 {
        let f = |e: f64| -> f64 {
            y.iter()
                .map(|&v| if v >= e { tau * (v - e) } else { -(1.0 - tau) * (e - v) })
                .sum()
        };
        let mut lo = y.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn two_point_closed_form() {
        for tau in [0.01, 0.3, 0.5, 0.8, 0.999] {
            let e = sample_expectile(&[0.0, 1.0], tau).unwrap();
            assert!((e - tau).abs() < 1e-12);
        }
    }

    #[test]
    fn half_level_is_the_mean() {
        let y = [3.0, -1.0, 7.5, 2.25, 0.0];
        let e = sample_expectile(&y, 0.5).unwrap();
        assert!((e - 2.35).abs() < 1e-12);
    }

    #[test]
    fn constant_sample() {
        let s = SortedSample::new(&[4.0; 7]).unwrap();
        assert_eq!(s.expectile(0.01), 4.0);
        assert_eq!(s.expectile(0.99), 4.0);
        assert_eq!(s.quantile(0.3), 4.0);
    }

    #[test]
    fn errors() {
        assert_eq!(SortedSample::new(&[]).unwrap_err(), SolverError::EmptySample);
        assert!(sample_expectile(&[1.0], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn matches_bisection_oracle(
            y in prop::collection::vec(-100.0f64..100.0, 1..60),
            tau in 0.001f64..0.999,
        ) {
            let e = sample_expectile(&y, tau).unwrap();
            let o = expectile_oracle(&y, tau);
            let range = y.iter().cloned().fold(0.0f64, |a, v| a.max(v.abs()));
            prop_assert!((e - o).abs() <= 1e-9 * (1.0 + range), "{} vs {}", e, o);
        }

        #[test]
        fn monotone_in_level(
            y in prop::collection::vec(-50.0f64..50.0, 2..40),
            a in 0.001f64..0.999,
            b in 0.001f64..0.999,
        ) {
            let s = SortedSample::new(&y).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(s.expectile(lo) <= s.expectile(hi) + 1e-9);
        }
    }
}

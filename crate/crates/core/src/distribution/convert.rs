use nalgebra::{DMatrix, DVector};

use super::{DistributionError, ExpectileCurve, LevelGrid, LevelMoments, QuantileCurve};
use crate::solvers::{min_norm_solve, nnls_warm};

/// Fewest expectile levels accepted by the conversion.
pub const MIN_CONVERSION_LEVELS: usize = 10;
/// Extra support placed beyond each end of the expectile range, as a
/// fraction of that range.
const SUPPORT_EXTENSION: f64 = 0.2;
const MASS_TOL: f64 = 1e-12;

/// Discrete distribution: atoms `x_k` with probabilities `p_k`, the CDF
/// `F(x_k)` and the partial moment `G(x_k) = sum_{i <= k} p_i x_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionApproximation {
    support: Vec<f64>,
    masses: Vec<f64>,
    cdf: Vec<f64>,
    partial: Vec<f64>,
}

impl DistributionApproximation {
    /// Atoms must be strictly increasing; masses are normalized to sum to one.
    pub fn from_masses(support: Vec<f64>, masses: Vec<f64>) -> Result<Self, DistributionError> {
        if support.len() != masses.len() {
            return Err(DistributionError::LengthMismatch {
                values: masses.len(),
                levels: support.len(),
            });
        }
        if support.is_empty() {
            return Err(DistributionError::EmptySample);
        }
        if support.iter().chain(&masses).any(|v| !v.is_finite()) {
            return Err(DistributionError::NonFinite);
        }
        if let Some(w) = support.windows(2).find(|w| w[1] <= w[0]) {
            return Err(DistributionError::NotIncreasing { prev: w[0], next: w[1] });
        }
        if masses.iter().any(|&p| p < 0.0) {
            return Err(DistributionError::Degenerate("negative probability mass".into()));
        }
        let total: f64 = masses.iter().sum();
        if total <= 0.0 {
            return Err(DistributionError::Degenerate("zero total mass".into()));
        }
        let masses: Vec<f64> = masses.iter().map(|p| p / total).collect();
        let mut cdf = Vec::with_capacity(masses.len());
        let mut partial = Vec::with_capacity(masses.len());
        let (mut f, mut g) = (0.0, 0.0);
        for (x, p) in support.iter().zip(&masses) {
            f += p;
            g += p * x;
            cdf.push(f);
            partial.push(g);
        }
        Ok(Self {
            support,
            masses,
            cdf,
            partial,
        })
    }

    /// Empirical distribution of a sample (tied values merged into one atom).
    pub fn from_sample(values: &[f64]) -> Result<Self, DistributionError> {
        if values.is_empty() {
            return Err(DistributionError::EmptySample);
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut support: Vec<f64> = Vec::new();
        let mut masses: Vec<f64> = Vec::new();
        for v in sorted {
            match support.last() {
                Some(&last) if last == v => *masses.last_mut().unwrap() += 1.0,
                _ => {
                    support.push(v);
                    masses.push(1.0);
                }
            }
        }
        Self::from_masses(support, masses)
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn cdf(&self) -> &[f64] {
        &self.cdf
    }

    pub fn partial_moments(&self) -> &[f64] {
        &self.partial
    }

    fn atom_index(&self, alpha: f64) -> usize {
        let n = self.cdf.len();
        self.cdf.iter().position(|&f| f >= alpha - MASS_TOL).unwrap_or(n - 1)
    }

    /// Quantile read off the CDF knots at mid-probability of each atom,
    /// linearly interpolated and clamped at the outermost knots.
    pub fn interpolated_quantile(&self, alpha: f64) -> f64 {
        let knots: Vec<(f64, f64)> = self
            .support
            .iter()
            .zip(&self.masses)
            .zip(&self.cdf)
            .filter(|((_, &p), _)| p > MASS_TOL)
            .map(|((&x, &p), &f)| (f - 0.5 * p, x))
            .collect();
        let (first, last) = (knots[0], knots[knots.len() - 1]);
        if alpha <= first.0 {
            return first.1;
        }
        if alpha >= last.0 {
            return last.1;
        }
        let hi = knots.partition_point(|k| k.0 < alpha);
        let (lo, hi) = (knots[hi - 1], knots[hi]);
        lo.1 + (alpha - lo.0) / (hi.0 - lo.0) * (hi.1 - lo.1)
    }

    /// Expectile of the discrete distribution at level `tau`.
    pub fn expectile(&self, tau: f64) -> f64 {
        let mean = self.mean();
        // balance(e) = tau * E(X - e)_+ - (1 - tau) * E(e - X)_+, decreasing in e
        let balance_at = |k: usize, e: f64| {
            let (f, g) = (self.cdf[k], self.partial[k]);
            tau * ((mean - g) - (1.0 - f) * e) - (1.0 - tau) * (f * e - g)
        };
        let n = self.support.len();
        let k = (0..n)
            .rev()
            .find(|&k| balance_at(k, self.support[k]) >= 0.0)
            .unwrap_or(0);
        if k == n - 1 {
            return self.support[k];
        }
        let (f, g) = (self.cdf[k], self.partial[k]);
        let e = (tau * (mean - g) + (1.0 - tau) * g) / (tau * (1.0 - f) + (1.0 - tau) * f);
        e.clamp(self.support[k], self.support[k + 1])
    }
}

impl LevelMoments for DistributionApproximation {
    /// Smallest atom whose CDF reaches `alpha`.
    fn quantile(&self, alpha: f64) -> f64 {
        self.support[self.atom_index(alpha)]
    }

    /// `G(q_alpha)` with the quantile atom included up to probability `alpha`.
    fn partial_moment_at_level(&self, alpha: f64) -> f64 {
        let k = self.atom_index(alpha);
        let (f_prev, g_prev) = if k == 0 {
            (0.0, 0.0)
        } else {
            (self.cdf[k - 1], self.partial[k - 1])
        };
        g_prev + (alpha - f_prev).clamp(0.0, self.masses[k]) * self.support[k]
    }

    fn mean(&self) -> f64 {
        self.partial[self.partial.len() - 1]
    }
}

/// Recovers a discrete distribution whose expectiles match `curve`.
///
/// The atoms are the (standardized) expectile values plus one point beyond
/// each end of their range. Matching the expectile at level `tau_j` is the
/// linear condition `sum_k a_jk p_k = 0` with
/// `a_jk = tau_j (x_k - e_j)_+ - (1 - tau_j)(e_j - x_k)_+`. The masses closest
/// to the level-as-CDF start `F(e_j) = tau_j` that satisfy all conditions
/// exactly are used when non-negative; otherwise the squared expectile
/// mismatch, each row divided by its CDF-weighted denominator, is minimized
/// over the simplex by projected Gauss-Newton.
pub fn expectile_distribution(curve: &ExpectileCurve) -> Result<DistributionApproximation, DistributionError> {
    let levels = curve.levels();
    if levels.len() < MIN_CONVERSION_LEVELS {
        return Err(DistributionError::TooFewLevels {
            needed: MIN_CONVERSION_LEVELS,
            got: levels.len(),
        });
    }
    let curve = curve.clone().repaired();
    let values = curve.values();
    let (lo, hi) = (values[0], values[values.len() - 1]);
    let center = 0.5 * (lo + hi);
    let range = hi - lo;
    if range <= 1e-9 * center.abs().max(1.0) {
        return DistributionApproximation::from_masses(vec![center], vec![1.0]);
    }
    let z: Vec<f64> = values.iter().map(|v| (v - center) / range).collect();

    // support: distinct standardized expectiles with their largest level
    let mut support = vec![-0.5 - SUPPORT_EXTENSION];
    let mut start_cdf = vec![0.5 * levels[0]];
    for (&zj, &tau) in z.iter().zip(levels) {
        if zj - support[support.len() - 1] > 1e-12 {
            support.push(zj);
            start_cdf.push(tau);
        } else {
            *start_cdf.last_mut().unwrap() = tau;
        }
    }
    support.push(0.5 + SUPPORT_EXTENSION);
    start_cdf.push(1.0);
    let k = support.len();
    let j = z.len();
    let mut p0: Vec<f64> = start_cdf
        .iter()
        .scan(0.0, |prev, &f| {
            let p = (f - *prev).max(0.0);
            *prev = f;
            Some(p)
        })
        .collect();
    let s: f64 = p0.iter().sum();
    p0.iter_mut().for_each(|p| *p /= s);

    let a = DMatrix::from_fn(j, k, |r, c| {
        let (tau, d) = (levels[r], support[c] - z[r]);
        if d >= 0.0 {
            tau * d
        } else {
            (1.0 - tau) * d
        }
    });

    let exact = exact_masses(&a, &p0);
    let masses = match exact.feasible {
        Some(p) => p,
        None => {
            let projected = project_simplex(exact.closest.as_slice());
            gauss_newton_masses(&a, &support, &z, levels, &[p0, projected])?
        }
    };
    let support: Vec<f64> = support.iter().map(|x| center + range * x).collect();
    let (support, masses): (Vec<f64>, Vec<f64>) =
        support.into_iter().zip(masses).filter(|(_, p)| *p > MASS_TOL).unzip();
    DistributionApproximation::from_masses(support, masses)
}

/// Closest point to `p0` on `{A p = 0, sum p = 1}` and, when that affine
/// set is a line, its non-negative point closest to `p0`.
struct ExactSolution {
    closest: DVector<f64>,
    feasible: Option<Vec<f64>>,
}

fn exact_masses(a: &DMatrix<f64>, p0: &[f64]) -> ExactSolution {
    let (j, k) = a.shape();
    let c = DMatrix::from_fn(j + 1, k, |r, col| if r < j { a[(r, col)] } else { 1.0 });
    let mut d = DVector::zeros(j + 1);
    d[j] = 1.0;
    let p0v = DVector::from_column_slice(p0);
    let rhs = &d - &c * &p0v;
    let (delta, rank) = min_norm_solve(&c, &rhs, 1e-12);
    let closest = p0v + delta;
    let residual = (&c * &closest - &d).amax();
    let mut out = ExactSolution {
        closest,
        feasible: None,
    };
    if residual > 1e-9 {
        return out;
    }
    let candidate = if out.closest.iter().all(|&v| v >= -1e-12) {
        Some(out.closest.clone())
    } else if rank + 1 == k {
        // one-dimensional solution set closest + t v; v spans the null space
        let mut basis = DMatrix::identity(k, k);
        c.transpose().qr().q_tr_mul(&mut basis);
        let v = basis.row(k - 1).transpose();
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for (p, v) in out.closest.iter().zip(v.iter()) {
            if v.abs() < 1e-14 {
                if *p < -1e-12 {
                    return out;
                }
            } else if *v > 0.0 {
                lo = lo.max(-p / v);
            } else {
                hi = hi.min(-p / v);
            }
        }
        (lo <= hi).then(|| {
            let t = 0.0f64.clamp(lo, hi);
            &out.closest + v * t
        })
    } else {
        None
    };
    out.feasible = candidate.map(|p| {
        let clipped: Vec<f64> = p.iter().map(|v| v.max(0.0)).collect();
        let total: f64 = clipped.iter().sum();
        clipped.into_iter().map(|v| v / total).collect()
    });
    out
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - 1.0) / (i + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Residuals `r_j = a_j . p / d_j . p` of the ratio objective and their
/// Jacobian, where `d_jk` is `1 - tau_j` for atoms at or below the
/// expectile and `tau_j` above it, so that `d_j . p = (1 - tau) F + tau (1 - F)`.
fn ratio_residuals(a: &DMatrix<f64>, d: &DMatrix<f64>, p: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let num = a * p;
    let den = d * p;
    let r = num.component_div(&den);
    let jac = DMatrix::from_fn(a.nrows(), a.ncols(), |i, k| (a[(i, k)] - r[i] * d[(i, k)]) / den[i]);
    (r, jac)
}

fn ratio_objective(a: &DMatrix<f64>, d: &DMatrix<f64>, p: &DVector<f64>) -> f64 {
    (a * p).component_div(&(d * p)).norm_squared()
}

/// Minimizes the ratio objective over the simplex by projected
/// Gauss-Newton from the best of `starts`: each step solves the linearized
/// problem over the simplex (non-negative least squares with a heavily
/// weighted sum-to-one row) and backtracks on the true objective.
fn gauss_newton_masses(
    a: &DMatrix<f64>,
    support: &[f64],
    z: &[f64],
    levels: &[f64],
    starts: &[Vec<f64>],
) -> Result<Vec<f64>, DistributionError> {
    const MAX_ITER: usize = 50;
    let (j, k) = a.shape();
    let d = DMatrix::from_fn(
        j,
        k,
        |r, c| if support[c] <= z[r] { 1.0 - levels[r] } else { levels[r] },
    );

    let (mut p, mut f) = starts
        .iter()
        .map(|s| {
            let p = DVector::from_vec(project_simplex(s));
            let f = ratio_objective(a, &d, &p);
            (p, f)
        })
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .expect("at least one start");
    for _ in 0..MAX_ITER {
        if f <= 1e-24 {
            break;
        }
        let (r, jac) = ratio_residuals(a, &d, &p);
        let big = 1e3 * jac.amax().max(1.0);
        let lhs = jac.clone().insert_row(j, big);
        let mut rhs = (&jac * &p - &r).insert_row(j, 0.0);
        rhs[j] = big;
        let support_set: Vec<usize> = (0..k).filter(|&c| p[c] > 0.0).collect();
        // a warm start can cycle on degenerate steps; a cold one rarely does,
        // and if it also fails the current iterate is still feasible
        let step = nnls_warm(&lhs, &rhs, &support_set).or_else(|_| nnls_warm(&lhs, &rhs, &[]));
        let q = match step {
            Ok(q) => q,
            Err(e) => {
                log::debug!("conversion step abandoned at objective {f:e}: {e}");
                break;
            }
        };
        let total = q.sum();
        if !(total > 0.0) {
            return Err(DistributionError::Conversion("no probability mass".into()));
        }
        let dir = q / total - &p;
        let slope = 2.0 * (jac.transpose() * &r).dot(&dir);
        if slope >= 0.0 {
            break;
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha > 1e-10 {
            let cand = &p + &dir * alpha;
            let fc = ratio_objective(a, &d, &cand);
            if !fc.is_finite() {
                return Err(DistributionError::Conversion("non-finite objective".into()));
            }
            if fc <= f + 1e-4 * alpha * slope {
                accepted = Some((cand, fc));
                break;
            }
            alpha *= 0.5;
        }
        let Some((cand, fc)) = accepted else { break };
        let gain = f - fc;
        p = cand.map(|v| v.max(0.0));
        f = fc;
        if gain <= 1e-10 * f {
            break;
        }
    }
    let total = p.sum();
    Ok(p.iter().map(|v| v / total).collect())
}

/// Quantiles on `target` implied by an expectile curve.
pub fn expectiles_to_quantiles(curve: &ExpectileCurve, target: &LevelGrid) -> Result<QuantileCurve, DistributionError> {
    let dist = expectile_distribution(curve)?;
    let values = target.levels().iter().map(|&a| dist.interpolated_quantile(a)).collect();
    Ok(QuantileCurve::new(target.clone(), values)?.repaired())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::sample_expectile;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn uniform_expectile(t: f64) -> f64 {
        t.sqrt() / (t.sqrt() + (1.0 - t).sqrt())
    }

    #[test]
    fn uniform_closed_form_expectile() {
        assert!((uniform_expectile(0.25) - 0.36603).abs() < 1e-5);
    }

    #[test]
    fn flat_curve_is_a_point_mass() {
        let grid = LevelGrid::expectile_default();
        let curve = ExpectileCurve::flat(grid, 37.5).unwrap();
        let q = expectiles_to_quantiles(&curve, &LevelGrid::percentiles()).unwrap();
        assert!(q.values().iter().all(|&v| v == 37.5));
    }

    #[test]
    fn too_few_levels() {
        let grid = LevelGrid::new(vec![0.1, 0.5, 0.9]).unwrap();
        let curve = ExpectileCurve::new(grid, vec![0.0, 1.0, 2.0]).unwrap();
        assert!(matches!(
            expectiles_to_quantiles(&curve, &LevelGrid::percentiles()),
            Err(DistributionError::TooFewLevels { .. })
        ));
    }

    #[test]
    fn uniform_expectiles_recover_uniform_quantiles() {
        let grid = LevelGrid::expectile_default();
        let values = grid.levels().iter().map(|&t| uniform_expectile(t)).collect();
        let curve = ExpectileCurve::new(grid, values).unwrap();
        let target = LevelGrid::new((1..=19).map(|k| k as f64 * 0.05).collect()).unwrap();
        let q = expectiles_to_quantiles(&curve, &target).unwrap();
        for (a, v) in target.levels().iter().zip(q.values()) {
            assert!((v - a).abs() < 0.02, "alpha {a}: {v}");
        }
    }

    #[test]
    fn normal_sample_expectiles_recover_the_tail_quantile() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let sample: Vec<f64> = (0..20_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let grid = LevelGrid::expectile_default();
        let values = grid
            .levels()
            .iter()
            .map(|&t| sample_expectile(&sample, t).unwrap())
            .collect();
        let curve = ExpectileCurve::new(grid, values).unwrap();
        let q = expectiles_to_quantiles(&curve, &LevelGrid::percentiles()).unwrap();
        assert!((q.value_at(0.05).unwrap() + 1.645).abs() < 0.1);
        assert!((q.value_at(0.95).unwrap() - 1.645).abs() < 0.1);
        assert!(q.value_at(0.5).unwrap().abs() < 0.05);
    }

    #[test]
    fn recovered_distribution_reproduces_its_expectiles() {
        let grid = LevelGrid::expectile_default();
        let values: Vec<f64> = grid
            .levels()
            .iter()
            .map(|&t| 10.0 + 4.0 * uniform_expectile(t))
            .collect();
        let curve = ExpectileCurve::new(grid.clone(), values.clone()).unwrap();
        let dist = expectile_distribution(&curve).unwrap();
        for (t, e) in grid.levels().iter().zip(&values) {
            assert!((dist.expectile(*t) - e).abs() < 1e-3 * 4.0, "tau {t}");
        }
    }

    #[test]
    fn noisy_curve_falls_back_and_stays_valid() {
        let grid = LevelGrid::expectile_default();
        let values: Vec<f64> = grid
            .levels()
            .iter()
            .enumerate()
            .map(|(i, &t)| uniform_expectile(t) + if i % 2 == 0 { 0.004 } else { -0.004 })
            .collect();
        let curve = ExpectileCurve::new(grid, values).unwrap();
        let dist = expectile_distribution(&curve).unwrap();
        assert!(dist.masses().iter().all(|&p| p >= 0.0));
        assert!((dist.cdf().last().unwrap() - 1.0).abs() < 1e-12);
        let q = expectiles_to_quantiles(&curve, &LevelGrid::percentiles()).unwrap();
        assert!(q.is_monotone());
        assert!((q.value_at(0.5).unwrap() - 0.5).abs() < 0.05);
    }

    #[test]
    fn degenerate_linearized_step_keeps_a_valid_curve() {
        // expectiles of a small skewed sample; a warm-started step cycles here
        let values = vec![
            -64.7718416197546,
            -63.07859823094857,
            -60.83823660305055,
            -58.762269042600714,
            -56.70914220103112,
            -48.71766523635717,
            -34.888747484833445,
            -23.688982155409438,
            -14.686923925869884,
            -6.339725905219858,
            1.871376495528271,
            9.949684787369414,
            17.89839455046445,
            25.720599648894837,
            33.189952924884224,
            40.26758474430223,
            47.31085912770364,
            53.99325329542358,
            60.64313814046043,
            67.32359716869284,
            74.03484172240097,
            80.77708509621861,
            87.55054255972983,
            94.19339519257782,
            100.90064413308622,
            107.69998344806383,
            114.58555192933143,
            121.51311559969302,
            128.6017854019235,
            135.85724743479471,
            143.2854585636867,
            150.9507948140259,
            158.88985129443833,
            167.10887450211965,
            175.62293956853833,
            184.4482237235467,
            193.60210888432667,
            203.10329592112535,
            212.97193218034172,
            223.4901141749268,
            235.02750757122897,
            248.10456638537255,
            262.2018212772152,
            277.44350276544355,
            293.9748649949837,
            311.9668295098645,
            331.6219167950286,
            353.1819024073892,
            376.9378124802679,
            403.24313729267516,
            432.5315401765925,
            465.3409532432757,
            502.3469191440697,
            556.5294880435845,
            604.3995059588998,
            622.6641663462191,
            642.2031053652111,
            663.1544978072637,
            676.4684368467938,
        ];
        let grid = LevelGrid::expectile_default();
        let e = ExpectileCurve::new(grid, values.clone()).unwrap();
        let q = expectiles_to_quantiles(&e, &LevelGrid::percentiles()).unwrap();
        assert!(q.is_monotone());
        let median = q.value_at(0.5).unwrap();
        assert!(median > values[0] && median < values[values.len() - 1]);
    }

    #[test]
    fn simplex_projection() {
        let p = project_simplex(&[0.5, 0.5, 0.5]);
        assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert_eq!(project_simplex(&[2.0, 0.0]), vec![1.0, 0.0]);
        let p = project_simplex(&[0.3, -0.2, 0.6]);
        assert!((p[0] - 0.35).abs() < 1e-15 && p[1] == 0.0 && (p[2] - 0.65).abs() < 1e-15);
    }

    #[test]
    fn ratio_jacobian_matches_finite_differences() {
        let a = DMatrix::from_row_slice(2, 3, &[0.2, -0.1, 0.4, -0.3, 0.05, 0.1]);
        let d = DMatrix::from_row_slice(2, 3, &[0.9, 0.1, 0.1, 0.7, 0.7, 0.3]);
        let p = DVector::from_vec(vec![0.2, 0.5, 0.3]);
        let (_, jac) = ratio_residuals(&a, &d, &p);
        for c in 0..3 {
            let h = 1e-6;
            let mut up = p.clone();
            let mut down = p.clone();
            up[c] += h;
            down[c] -= h;
            let fd = (ratio_residuals(&a, &d, &up).0 - ratio_residuals(&a, &d, &down).0) / (2.0 * h);
            for r in 0..2 {
                assert!((fd[r] - jac[(r, c)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn discrete_moments() {
        let d = DistributionApproximation::from_sample(&[1.0, 2.0, 2.0, 5.0]).unwrap();
        assert_eq!(d.support(), &[1.0, 2.0, 5.0]);
        assert_eq!(d.cdf(), &[0.25, 0.75, 1.0]);
        assert_eq!(d.mean(), 2.5);
        assert_eq!(d.quantile(0.5), 2.0);
        assert!((d.partial_moment_at_level(0.5) - (0.25 + 0.5)).abs() < 1e-15);
        assert!((d.expectile(0.5) - 2.5).abs() < 1e-12);
        assert_eq!(d.interpolated_quantile(0.01), 1.0);
        assert_eq!(d.interpolated_quantile(0.5), 2.0);
    }
}

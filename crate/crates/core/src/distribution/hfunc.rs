use super::DistributionError;

/// Distribution functionals needed to map quantile levels to expectile levels.
pub trait LevelMoments {
    /// `q_alpha`.
    fn quantile(&self, alpha: f64) -> f64;
    /// `G(q_alpha)`, the partial moment up to the alpha-quantile.
    fn partial_moment_at_level(&self, alpha: f64) -> f64;
    /// The mean, which is also the 0.5-expectile.
    fn mean(&self) -> f64;
}

/// Expectile level whose expectile equals the `alpha`-quantile:
///
/// `h(alpha) = (G(q) - alpha q) / (2 G(q) - m + (1 - 2 alpha) q)`.
pub fn h_level<M: LevelMoments + ?Sized>(dist: &M, alpha: f64) -> Result<f64, DistributionError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(DistributionError::LevelOutOfRange(alpha));
    }
    let q = dist.quantile(alpha);
    let g = dist.partial_moment_at_level(alpha);
    let m = dist.mean();
    let num = -alpha * q + g;
    let den = -m + 2.0 * g + (1.0 - 2.0 * alpha) * q;
    let scale = m.abs().max(q.abs()).max(1.0);
    if den.abs() <= 1e-14 * scale {
        return Err(DistributionError::Degenerate(format!(
            "h-function denominator vanishes at level {alpha}"
        )));
    }
    Ok(num / den)
}

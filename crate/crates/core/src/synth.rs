//! Synthetic hourly panels from a known ARX process.
//!
//! Exogenous inputs follow fixed weekly-periodic hourly profiles. With zero
//! noise the exogenous inputs are exactly periodic, so after the burn-in the
//! prices settle on a weekly cycle that every expert model reproduces
//! exactly, on the price scale or after any pointwise transform. With
//! positive noise the exogenous profiles get a multiplicative jitter and the
//! price equation a Gaussian innovation with standard deviation `noise`.

use chrono::{Datelike, Duration, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use thiserror::Error;

use crate::arx::ModelSpec;
use crate::timeseries::{DayRow, DayType, ExogenousSeries, HourlyPanel, PanelError, DEFAULT_EXOGENOUS, HOURS};

/// Days simulated and discarded before the first emitted day.
pub const BURN_IN_DAYS: usize = 2000;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("variant {0} cannot be simulated; use M1, M2 or M3")]
    UnsupportedVariant(ModelSpec),
    #[error("noise scale must be finite and non-negative, got {0}")]
    BadNoise(f64),
    #[error("need at least {min} days, got {0}", min = 8)]
    TooFewDays(usize),
    #[error(transparent)]
    Panel(#[from] PanelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub variant: ModelSpec,
    /// Standard deviation of the price innovation, EUR/MWh.
    pub noise: f64,
    pub days: usize,
    pub seed: u64,
    pub start: NaiveDate,
}

/// Coefficients of the generating process for one hour, in the layout of
/// the expert models (`delta`/`eta` only for M3).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HourCoefficients {
    pub hour: usize,
    pub theta: Vec<(usize, f64)>,
    pub psi: Vec<f64>,
    pub alpha: [f64; 4],
    pub delta: Option<f64>,
    pub eta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruth {
    pub variant: String,
    pub noise: f64,
    pub days: usize,
    pub seed: u64,
    pub start: NaiveDate,
    pub burn_in_days: usize,
    pub exogenous: Vec<String>,
    pub coefficients: Vec<HourCoefficients>,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub panel: HourlyPanel,
    pub truth: GroundTruth,
}

fn coefficients(variant: ModelSpec, hour: usize) -> HourCoefficients {
    let theta = match variant {
        ModelSpec::M1 => vec![(1, 0.5), (2, 0.15), (7, 0.25)],
        _ => vec![(1, 0.4), (2, 0.1), (3, 0.05), (4, 0.0), (5, 0.0), (6, 0.05), (7, 0.2)],
    };
    // evening hours react a little more to load
    let peak = if (17..=20).contains(&hour) { 1.5 } else { 1.0 };
    let (delta, eta) = if variant == ModelSpec::M3 {
        (Some(-0.05), Some(0.04))
    } else {
        (None, None)
    };
    HourCoefficients {
        hour,
        theta,
        psi: vec![2e-5, -2e-4, -1e-4, 1e-4 * peak],
        alpha: [0.5, -0.5, -1.5, 0.3],
        delta,
        eta,
    }
}

/// Weekly-periodic profile of exogenous variable `k` at `hour` on `weekday`
/// (0 = Monday).
fn profile(k: usize, weekday: usize, hour: usize) -> f64 {
    let h = hour as f64;
    let weekend = weekday >= 5;
    let load = 50_000.0 + 12_000.0 * ((h - 4.0) / 24.0 * std::f64::consts::TAU).sin().max(-0.5)
        - if weekend { 8_000.0 } else { 0.0 }
        + 300.0 * weekday as f64;
    let solar = 6_000.0 * ((h - 6.0) / 12.0 * std::f64::consts::PI).sin().max(0.0);
    let wind = 10_000.0 + 3_000.0 * ((weekday as f64 + h / 24.0) / 7.0 * std::f64::consts::TAU).cos();
    match k {
        0 => 0.9 * load + 0.3 * wind + 0.5 * solar,
        1 => wind,
        2 => solar,
        _ => load,
    }
}

/// Simulates the panel and returns it with the generating coefficients.
pub fn generate(spec: &SynthSpec) -> Result<SynthOutput, SynthError> {
    if !matches!(spec.variant, ModelSpec::M1 | ModelSpec::M2 | ModelSpec::M3) {
        return Err(SynthError::UnsupportedVariant(spec.variant));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(SynthError::BadNoise(spec.noise));
    }
    if spec.days < 8 {
        return Err(SynthError::TooFewDays(spec.days));
    }
    let coefs: Vec<HourCoefficients> = (0..HOURS).map(|h| coefficients(spec.variant, h)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let innovation = Normal::new(0.0, spec.noise).map_err(|_| SynthError::BadNoise(spec.noise))?;
    let jitter = Normal::new(0.0, 0.05).expect("valid jitter scale");
    let noisy = spec.noise > 0.0;

    let total = BURN_IN_DAYS + spec.days;
    let first = spec.start - Duration::days(BURN_IN_DAYS as i64);
    let nz = DEFAULT_EXOGENOUS.len();
    let mut exogenous: Vec<Vec<DayRow>> = vec![Vec::with_capacity(total); nz];
    let mut prices: Vec<DayRow> = Vec::with_capacity(total);
    let mut dates = Vec::with_capacity(total);
    for d in 0..total {
        let date = first + Duration::days(d as i64);
        let weekday = date.weekday().num_days_from_monday() as usize;
        let day_type = DayType::classify(date, false);
        for (k, series) in exogenous.iter_mut().enumerate() {
            series.push(std::array::from_fn(|h| {
                let base = profile(k, weekday, h);
                if noisy {
                    base * (1.0 + jitter.sample(&mut rng))
                } else {
                    base
                }
            }));
        }
        let row: DayRow = if d < 7 {
            [40.0; HOURS]
        } else {
            let prev = &prices[d - 1];
            let lo = prev.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = prev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut row = [0.0; HOURS];
            for (h, c) in coefs.iter().enumerate() {
                let ar: f64 = c.theta.iter().map(|&(l, t)| t * prices[d - l][h]).sum();
                let exo: f64 = c.psi.iter().enumerate().map(|(k, p)| p * exogenous[k][d][h]).sum();
                let extremes = c.delta.unwrap_or(0.0) * lo + c.eta.unwrap_or(0.0) * hi;
                let eps = if noisy { innovation.sample(&mut rng) } else { 0.0 };
                row[h] = ar + exo + extremes + c.alpha[day_type as usize] + eps;
            }
            row
        };
        prices.push(row);
        dates.push(date);
    }

    let keep = BURN_IN_DAYS..total;
    let panel = HourlyPanel::new(
        dates[keep.clone()].to_vec(),
        prices[keep.clone()].to_vec(),
        DEFAULT_EXOGENOUS
            .iter()
            .zip(&exogenous)
            .map(|(name, values)| ExogenousSeries {
                name: name.to_string(),
                values: values[keep.clone()].to_vec(),
            })
            .collect(),
        vec![false; spec.days],
    )?;
    Ok(SynthOutput {
        panel,
        truth: GroundTruth {
            variant: spec.variant.to_string(),
            noise: spec.noise,
            days: spec.days,
            seed: spec.seed,
            start: spec.start,
            burn_in_days: BURN_IN_DAYS,
            exogenous: DEFAULT_EXOGENOUS.iter().map(|s| s.to_string()).collect(),
            coefficients: coefs,
        },
    })
}

//! Quantile-band candidate detection.
//!
//! A point is a candidate when it leaves the band `mu ± z·sigma`; its
//! confidence grows with the distance beyond the violated bound.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::forecast::GaussianForecast;
use crate::series::SeriesKey;

/// z-score used for the 99.998% band in production.
pub const DEFAULT_Z_OVERRIDE: f64 = 4.09;
pub const DEFAULT_BAND_QUANTILE: f64 = 0.99998;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Stage1Error {
    #[error("length mismatch: forecast {forecast}, actual {actual}, timestamps {timestamps}")]
    LengthMismatch {
        forecast: usize,
        actual: usize,
        timestamps: usize,
    },
    #[error("negative distance {0}")]
    NegativeDistance(f64),
    #[error("sigma must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("invalid band config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BandConfig {
    pub quantile: f64,
    pub z_override: Option<f64>,
    pub two_sided: bool,
}

impl Default for BandConfig {
    fn default() -> Self {
        Self {
            quantile: DEFAULT_BAND_QUANTILE,
            z_override: Some(DEFAULT_Z_OVERRIDE),
            two_sided: true,
        }
    }
}

impl BandConfig {
    /// Band with `z = Φ⁻¹(quantile)` and no override.
    pub fn analytic(quantile: f64) -> Self {
        Self {
            quantile,
            z_override: None,
            two_sided: true,
        }
    }

    pub fn z(&self) -> f64 {
        self.z_override
            .unwrap_or_else(|| Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(self.quantile))
    }

    pub fn validate(&self) -> Result<(), Stage1Error> {
        if !(self.quantile > 0.5 && self.quantile < 1.0) {
            return Err(Stage1Error::InvalidConfig(format!(
                "quantile {} outside (0.5, 1)",
                self.quantile
            )));
        }
        let z = self.z();
        if !(z > 0.0 && z.is_finite()) {
            return Err(Stage1Error::InvalidConfig(format!("z {z} must be positive")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundSide {
    Upper,
    Lower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyCandidate {
    pub key: SeriesKey,
    pub timestamp: DateTime<Utc>,
    pub actual: f64,
    pub mu: f64,
    pub sigma: f64,
    #[serde(rename = "residual")]
    pub raw_residual: f64,
    pub abs_standardized_residual: f64,
    #[serde(rename = "side")]
    pub bound_violated: BoundSide,
    pub confidence: f64,
}

/// `1 - exp(-d / sigma)`: 0 on the bound, approaching 1 far beyond it.
pub fn confidence(distance: f64, sigma: f64) -> Result<f64, Stage1Error> {
    if distance < 0.0 || distance.is_nan() {
        return Err(Stage1Error::NegativeDistance(distance));
    }
    if !(sigma > 0.0) {
        return Err(Stage1Error::NonPositiveSigma(sigma));
    }
    Ok(-(-distance / sigma).exp_m1())
}

/// Flag every step outside the band. `timestamps[i]` labels step `i`.
pub fn band_filter(
    key: &SeriesKey,
    timestamps: &[DateTime<Utc>],
    forecast: &GaussianForecast,
    actual: &[f64],
    config: &BandConfig,
) -> Result<Vec<AnomalyCandidate>, Stage1Error> {
    if forecast.horizon() != actual.len() || timestamps.len() != actual.len() {
        return Err(Stage1Error::LengthMismatch {
            forecast: forecast.horizon(),
            actual: actual.len(),
            timestamps: timestamps.len(),
        });
    }
    let z = config.z();
    let mut out = Vec::new();
    for (i, &a) in actual.iter().enumerate() {
        let (mu, sigma) = (forecast.mu()[i], forecast.sigma()[i]);
        let upper = mu + z * sigma;
        let lower = mu - z * sigma;
        let (side, distance) = if a > upper {
            (BoundSide::Upper, a - upper)
        } else if config.two_sided && a < lower {
            (BoundSide::Lower, lower - a)
        } else {
            continue;
        };
        let raw = a - mu;
        out.push(AnomalyCandidate {
            key: key.clone(),
            timestamp: timestamps[i],
            actual: a,
            mu,
            sigma,
            raw_residual: raw,
            abs_standardized_residual: (raw / sigma).abs(),
            bound_violated: side,
            confidence: confidence(distance, sigma)?,
        });
    }
    Ok(out)
}

/// Count of two-sided band violations of a standardized stream, without
/// building candidates.
pub fn count_violations(standardized: impl IntoIterator<Item = f64>, z: f64) -> usize {
    standardized.into_iter().filter(|r| r.abs() > z).count()
}

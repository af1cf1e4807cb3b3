//! Probabilistic forecasters producing a per-step Gaussian predictive
//! distribution.
//!
//! Two implementations ship: [`SeasonalNaive`] (repeat the last period, sigma
//! from lag residuals) and [`ConvForecaster`], a small dilated causal
//! convolution network with a Gaussian head trained by negative log-likelihood.
//! Both are wrapped by the serializable [`Model`] enum.

mod conv;
mod naive;

pub use conv::{ConvForecaster, ConvGradients, ConvNet};
pub use naive::SeasonalNaive;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::series::RegularSeries;

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("series {key} has {len} slots, need at least {required}")]
    SeriesTooShort { key: String, len: usize, required: usize },
    #[error("context has {len} slots, need at least {required}")]
    ContextTooShort { len: usize, required: usize },
    #[error("series {0} has gaps; impute before training or prediction")]
    HasGaps(String),
    #[error("training diverged: non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("invalid sigma {0}: must be finite and positive")]
    InvalidSigma(f64),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("no series to train on")]
    NoSeries,
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-step predictive mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianForecast {
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

impl GaussianForecast {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self, ForecastError> {
        if mu.len() != sigma.len() {
            return Err(ForecastError::LengthMismatch {
                left: mu.len(),
                right: sigma.len(),
            });
        }
        if let Some(s) = sigma.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(ForecastError::InvalidSigma(*s));
        }
        Ok(Self { mu, sigma })
    }

    pub fn horizon(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn upper(&self, z: f64) -> Vec<f64> {
        self.mu.iter().zip(&self.sigma).map(|(m, s)| m + z * s).collect()
    }

    pub fn lower(&self, z: f64) -> Vec<f64> {
        self.mu.iter().zip(&self.sigma).map(|(m, s)| m - z * s).collect()
    }

    /// Keep only the steps where `keep` is true.
    pub fn select(&self, keep: &[bool]) -> GaussianForecast {
        let pick = |v: &[f64]| v.iter().zip(keep).filter(|(_, k)| **k).map(|(x, _)| *x).collect();
        GaussianForecast {
            mu: pick(&self.mu),
            sigma: pick(&self.sigma),
        }
    }
}

/// Lower bound on any predicted sigma for a context of the given scale.
pub fn sigma_floor(scale: f64) -> f64 {
    1e-6 * scale.abs().max(1.0)
}

/// Raw residual `a - mu` and standardized residual `(a - mu) / sigma` per step.
pub fn residuals(forecast: &GaussianForecast, actual: &[f64]) -> Result<Vec<(f64, f64)>, ForecastError> {
    if forecast.horizon() != actual.len() {
        return Err(ForecastError::LengthMismatch {
            left: forecast.horizon(),
            right: actual.len(),
        });
    }
    Ok(actual
        .iter()
        .zip(forecast.mu.iter().zip(&forecast.sigma))
        .map(|(a, (m, s))| {
            let raw = a - m;
            (raw, raw / s)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub context_length: usize,
    pub horizon: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub channels: usize,
    pub kernel_size: usize,
    pub dilations: Vec<usize>,
    pub seed: u64,
    /// Series crops per SGD step.
    pub batch_size: usize,
    /// Forecast origins per training crop.
    pub origins_per_crop: usize,
    pub clip_norm: f64,
    /// Period used by the seasonal-naive model.
    pub season_length: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            context_length: 2016,
            horizon: 12,
            epochs: 40,
            learning_rate: 0.05,
            channels: 16,
            kernel_size: 2,
            dilations: vec![1, 2, 4, 8, 16, 32, 64],
            seed: 7,
            batch_size: 8,
            origins_per_crop: 32,
            clip_norm: 1.0,
            season_length: 288,
        }
    }
}

impl TrainConfig {
    pub fn receptive_field(&self) -> usize {
        1 + (self.kernel_size.saturating_sub(1)) * self.dilations.iter().sum::<usize>()
    }

    pub fn validate(&self) -> Result<(), ForecastError> {
        let bad = |m: String| Err(ForecastError::InvalidConfig(m));
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.kernel_size == 0 || self.channels == 0 || self.dilations.contains(&0) {
            return bad("kernel_size, channels and dilations must be positive".into());
        }
        if self.receptive_field() > self.context_length {
            return bad(format!(
                "receptive field {} exceeds context_length {}",
                self.receptive_field(),
                self.context_length
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive".into());
        }
        if self.batch_size == 0 || self.origins_per_crop == 0 {
            return bad("batch_size and origins_per_crop must be positive".into());
        }
        if self.season_length == 0 {
            return bad("season_length must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub model: String,
    /// Mean Gaussian negative log-likelihood per epoch (standardized units).
    pub loss_curve: Vec<f64>,
    pub final_nll: f64,
    pub series_used: usize,
    pub wall_time_ms: u64,
}

/// A forecaster: trained on gap-free history, predicts a Gaussian per step.
///
/// Prediction is causal: the forecast for a step only depends on context
/// values before it.
pub trait ForecastModel: Send + Sync {
    fn name(&self) -> &'static str;

    fn fit(&mut self, series: &[RegularSeries], config: &TrainConfig) -> Result<TrainReport, ForecastError>;

    /// Shortest context accepted by [`ForecastModel::predict_values`].
    fn min_context(&self) -> usize;

    /// Steps of history the model was configured to look at.
    fn context_length(&self) -> usize;

    fn predict_values(&self, context: &[f64], horizon: usize) -> Result<GaussianForecast, ForecastError>;

    fn predict(&self, context: &RegularSeries, horizon: usize) -> Result<GaussianForecast, ForecastError> {
        let values = context
            .dense()
            .ok_or_else(|| ForecastError::HasGaps(context.key().to_string()))?;
        self.predict_values(&values, horizon)
    }
}

pub(crate) fn check_training_set(series: &[RegularSeries], required: usize) -> Result<Vec<Vec<f64>>, ForecastError> {
    if series.is_empty() {
        return Err(ForecastError::NoSeries);
    }
    series
        .iter()
        .map(|s| {
            if s.len() < required {
                return Err(ForecastError::SeriesTooShort {
                    key: s.key().to_string(),
                    len: s.len(),
                    required,
                });
            }
            s.dense().ok_or_else(|| ForecastError::HasGaps(s.key().to_string()))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    SeasonalNaive(SeasonalNaive),
    Conv(ConvForecaster),
}

impl Model {
    fn inner(&self) -> &dyn ForecastModel {
        match self {
            Model::SeasonalNaive(m) => m,
            Model::Conv(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn ForecastModel {
        match self {
            Model::SeasonalNaive(m) => m,
            Model::Conv(m) => m,
        }
    }
}

impl ForecastModel for Model {
    fn name(&self) -> &'static str {
        self.inner().name()
    }

    fn fit(&mut self, series: &[RegularSeries], config: &TrainConfig) -> Result<TrainReport, ForecastError> {
        self.inner_mut().fit(series, config)
    }

    fn min_context(&self) -> usize {
        self.inner().min_context()
    }

    fn context_length(&self) -> usize {
        self.inner().context_length()
    }

    fn predict_values(&self, context: &[f64], horizon: usize) -> Result<GaussianForecast, ForecastError> {
        self.inner().predict_values(context, horizon)
    }
}

pub const MODEL_FORMAT: &str = "sentinel-forecaster";
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// On-disk model: a versioned header plus the model (config and weights).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub metric_name: Option<String>,
    pub model: Model,
}

impl ModelFile {
    pub fn new(model: Model, metric_name: Option<String>) -> Self {
        Self {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_FORMAT_VERSION,
            metric_name,
            model,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("model serializes")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ForecastError> {
        let file: ModelFile = serde_json::from_slice(bytes).map_err(|e| ForecastError::Format(e.to_string()))?;
        if file.format != MODEL_FORMAT || file.version != MODEL_FORMAT_VERSION {
            return Err(ForecastError::Format(format!(
                "unsupported model format {} v{}",
                file.format, file.version
            )));
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<(), ForecastError> {
        crate::fsutil::write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ForecastError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

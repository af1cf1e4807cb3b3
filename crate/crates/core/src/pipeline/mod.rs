//! Funnel orchestration: impute, forecast, band filter, tail threshold.
//!
//! [`run_window`] processes one inference window of `horizon` steps for every
//! series of a source. The tail model is fitted on the pooled absolute
//! standardized residuals of the window; when that sample is too small for
//! the configured EVT settings it is extended with backtest windows that end
//! where the previous one starts.

mod eval;
mod records;
pub mod synth;
mod train;

pub use eval::{
    build_model, electricity_eval, imputation_ab, inject_anomalies, precision_recall, quantile_sweep, ElectricityEvalConfig,
    EvalReport, EvalResult, EvalRun, ImputationAbResult, InjectionSign, InjectionSpec, ModelKind, SweepRow, TruthLabel,
};
pub use train::{train_on_source, TrainOutcome};
pub use records::{record_id, window_id, AnomalyRecord, ReportStore, SeriesBand, Verdict, VerdictEntry};

use std::collections::BTreeMap;
use std::time::Instant;

use chrono::{DateTime, Duration, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evt::{pot_threshold, tier_of, EvtConfig, EvtError, GpdFit, ScoreSpace, Tier};
use crate::forecast::{ForecastError, ForecastModel, GaussianForecast};
use crate::ingest::{IngestError, SeriesSource};
use crate::series::{align_to_grid, impute, smape, ImputationPolicy, SeriesError, SeriesKey};
use crate::stage1::{band_filter, AnomalyCandidate, BandConfig, Stage1Error};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("NoModel: no trained model is available")]
    NoModel,
    #[error("EmptyWindow: window has no steps")]
    EmptyWindow,
    #[error("window {0} is already committed")]
    AlreadyCommitted(String),
    #[error("record {0} not found")]
    NotFound(String),
    #[error("verdict conflict on {id}: already {current:?}")]
    VerdictConflict { id: String, current: Verdict },
    #[error("injection spec too dense: {0}")]
    SpecTooDense(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("corrupt report file {path}: {message}")]
    Corrupt { path: String, message: String },
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error(transparent)]
    Stage1(#[from] Stage1Error),
    #[error(transparent)]
    Evt(#[from] EvtError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub band: BandConfig,
    pub evt: EvtConfig,
    pub interval_seconds: i64,
    pub horizon: usize,
    pub imputation: ImputationPolicy,
    /// Pooled tail sample size to reach with backtest windows; the EVT
    /// minimum applies when smaller.
    pub min_evt_sample: usize,
    /// Upper bound on backtest windows added to the tail sample.
    pub max_calibration_windows: usize,
    /// Use a series' own tail fit when its sample alone is large enough.
    pub per_series_evt: bool,
    /// Only series of this metric are processed.
    pub metric_name: Option<String>,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            band: BandConfig::default(),
            evt: EvtConfig::default(),
            interval_seconds: 300,
            horizon: 12,
            imputation: ImputationPolicy::Median,
            min_evt_sample: 0,
            max_calibration_windows: 16,
            per_series_evt: true,
            metric_name: None,
        }
    }
}

impl WindowConfig {
    pub fn interval(&self) -> Duration {
        Duration::seconds(self.interval_seconds)
    }

    pub fn window_end(&self, start: DateTime<Utc>) -> DateTime<Utc> {
        start + self.interval() * self.horizon as i32
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesFit {
    pub key: SeriesKey,
    pub fit: GpdFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunnelReport {
    pub window_start: DateTime<Utc>,
    pub window_end: DateTime<Utc>,
    pub model: String,
    pub series_total: usize,
    pub series_evaluated: usize,
    pub points_total: usize,
    pub stage1_count: usize,
    pub high_count: usize,
    pub low_count: usize,
    /// Over HIGH-tier points only; 0 when there are none.
    pub smape_on_anomalies: f64,
    pub smape_stage1: f64,
    pub smape_all: f64,
    pub band_z: f64,
    pub risk_q: f64,
    pub gpd_fit: Option<GpdFit>,
    pub series_fits: Vec<SeriesFit>,
    pub evt_sample_size: usize,
    pub calibration_windows: usize,
    pub wall_time_ms: u64,
}

impl FunnelReport {
    /// The tail fit that tiered records of `key`.
    pub fn fit_for(&self, key: &SeriesKey) -> Option<&GpdFit> {
        self.series_fits
            .iter()
            .find(|f| &f.key == key)
            .map(|f| &f.fit)
            .or(self.gpd_fit.as_ref())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowOutcome {
    pub report: FunnelReport,
    pub records: Vec<AnomalyRecord>,
    pub bands: Vec<SeriesBand>,
}

struct Span {
    forecast: GaussianForecast,
    timestamps: Vec<DateTime<Utc>>,
    observed: Vec<bool>,
    actual: Vec<f64>,
}

impl Span {
    fn observed_forecast(&self) -> GaussianForecast {
        self.forecast.select(&self.observed)
    }

    fn observed_timestamps(&self) -> Vec<DateTime<Utc>> {
        self.timestamps
            .iter()
            .zip(&self.observed)
            .filter(|(_, k)| **k)
            .map(|(t, _)| *t)
            .collect()
    }

    fn scores(&self) -> Vec<f64> {
        let f = self.observed_forecast();
        self.actual
            .iter()
            .zip(f.mu().iter().zip(f.sigma()))
            .map(|(a, (m, s))| ((a - m) / s).abs())
            .collect()
    }
}

/// Forecast the `horizon` steps from `origin` using the context before it.
/// `None` when the context or the span has no observations.
fn evaluate_span(
    source: &dyn SeriesSource,
    key: &SeriesKey,
    model: &dyn ForecastModel,
    config: &WindowConfig,
    origin: DateTime<Utc>,
) -> Result<Option<Span>, PipelineError> {
    let interval = config.interval();
    let context_len = model.context_length().max(model.min_context());
    let from = origin - interval * context_len as i32;
    let to = config.window_end(origin);
    let points = source.points_in(key, from, to)?;
    let grid = align_to_grid(&points, key.clone(), interval, from, to)?;
    let context = grid.slice(0, context_len);
    let span = grid.slice(context_len, grid.len());
    if context.observed().next().is_none() || span.observed().next().is_none() {
        return Ok(None);
    }
    let context = impute(&context, config.imputation)?;
    let values = context.dense().expect("imputed context is gap-free");
    let forecast = model.predict_values(&values, config.horizon)?;
    Ok(Some(Span {
        forecast,
        timestamps: (0..span.len()).map(|i| span.timestamp_at(i)).collect(),
        observed: span.values().iter().map(Option::is_some).collect(),
        actual: span.observed().collect(),
    }))
}

fn evaluate_all(
    source: &dyn SeriesSource,
    keys: &[SeriesKey],
    model: &dyn ForecastModel,
    config: &WindowConfig,
    origin: DateTime<Utc>,
) -> Result<Vec<Option<Span>>, PipelineError> {
    keys.par_iter()
        .map(|key| evaluate_span(source, key, model, config, origin))
        .collect()
}

fn smape_or_zero(forecast: &[f64], actual: &[f64]) -> f64 {
    smape(forecast, actual).unwrap_or(0.0)
}

/// Run the funnel for the window `[start, start + horizon·interval)`.
pub fn run_window(
    source: &dyn SeriesSource,
    model: &dyn ForecastModel,
    config: &WindowConfig,
    start: DateTime<Utc>,
) -> Result<WindowOutcome, PipelineError> {
    let started = Instant::now();
    if config.horizon == 0 {
        return Err(PipelineError::EmptyWindow);
    }
    config.band.validate()?;
    config.evt.validate()?;
    let mut keys: Vec<SeriesKey> = source
        .keys()
        .into_iter()
        .filter(|k| config.metric_name.as_ref().is_none_or(|m| &k.metric_name == m))
        .collect();
    // Sorted so aggregates do not depend on the source's iteration order.
    keys.sort();

    let spans = evaluate_all(source, &keys, model, config, start)?;

    let mut series_samples: Vec<Vec<f64>> = spans
        .iter()
        .map(|s| s.as_ref().map(Span::scores).unwrap_or_default())
        .collect();
    let mut pooled: Vec<f64> = series_samples.iter().flatten().copied().collect();
    let required = config.evt.required_sample();
    let target = required.max(config.min_evt_sample);
    let mut calibration_windows = 0;
    let step = config.interval() * config.horizon as i32;
    while !pooled.is_empty() && pooled.len() < target && calibration_windows < config.max_calibration_windows {
        calibration_windows += 1;
        let origin = start - step * calibration_windows as i32;
        for (sample, span) in series_samples
            .iter_mut()
            .zip(evaluate_all(source, &keys, model, config, origin)?)
        {
            if let Some(span) = span {
                let scores = span.scores();
                pooled.extend_from_slice(&scores);
                sample.extend(scores);
            }
        }
    }

    let mut candidates: Vec<Vec<AnomalyCandidate>> = Vec::with_capacity(keys.len());
    for (key, span) in keys.iter().zip(&spans) {
        candidates.push(match span {
            Some(span) => band_filter(
                key,
                &span.observed_timestamps(),
                &span.observed_forecast(),
                &span.actual,
                &config.band,
            )?,
            None => Vec::new(),
        });
    }
    let any_candidates = candidates.iter().any(|c| !c.is_empty());

    let gpd_fit = if pooled.is_empty() {
        None
    } else {
        match pot_threshold(&pooled, &config.evt) {
            Ok(fit) => Some(fit),
            Err(_) if !any_candidates => None,
            Err(e) => return Err(e.into()),
        }
    };
    let mut series_fits = Vec::new();
    if config.per_series_evt && gpd_fit.is_some() {
        for (key, sample) in keys.iter().zip(&series_samples) {
            if sample.len() >= required {
                if let Ok(fit) = pot_threshold(sample, &config.evt) {
                    series_fits.push(SeriesFit { key: key.clone(), fit });
                }
            }
        }
    }

    let band_z = config.band.z();
    let mut report = FunnelReport {
        window_start: start,
        window_end: config.window_end(start),
        model: model.name().to_string(),
        series_total: keys.len(),
        series_evaluated: spans.iter().flatten().count(),
        points_total: spans.iter().flatten().map(|s| s.actual.len()).sum(),
        stage1_count: 0,
        high_count: 0,
        low_count: 0,
        smape_on_anomalies: 0.0,
        smape_stage1: 0.0,
        smape_all: 0.0,
        band_z,
        risk_q: config.evt.risk_q,
        gpd_fit,
        series_fits,
        evt_sample_size: pooled.len(),
        calibration_windows,
        wall_time_ms: 0,
    };

    let mut records = Vec::new();
    for (key, found) in keys.iter().zip(candidates) {
        if found.is_empty() {
            continue;
        }
        let fit = report.fit_for(key).expect("candidates imply a fit");
        for candidate in found {
            let tier = tier_of(ScoreSpace::AbsStandardizedResidual.score(&candidate), fit.z_q);
            records.push(AnomalyRecord::new(candidate, tier, fit.z_q, band_z, start));
        }
    }

    let (mut all_f, mut all_a) = (Vec::new(), Vec::new());
    for span in spans.iter().flatten() {
        all_f.extend_from_slice(span.observed_forecast().mu());
        all_a.extend_from_slice(&span.actual);
    }
    let pick = |only_high: bool| -> (Vec<f64>, Vec<f64>) {
        records
            .iter()
            .filter(|r| !only_high || r.tier == Tier::High)
            .map(|r| (r.candidate.mu, r.candidate.actual))
            .unzip()
    };
    let (high_f, high_a) = pick(true);
    let (cand_f, cand_a) = pick(false);
    report.stage1_count = records.len();
    report.high_count = high_f.len();
    report.low_count = records.len() - high_f.len();
    report.smape_on_anomalies = smape_or_zero(&high_f, &high_a);
    report.smape_stage1 = smape_or_zero(&cand_f, &cand_a);
    report.smape_all = smape_or_zero(&all_f, &all_a);

    let bands = keys
        .iter()
        .zip(&spans)
        .filter_map(|(key, span)| {
            span.as_ref().map(|s| SeriesBand {
                key: key.clone(),
                start,
                interval_seconds: config.interval_seconds,
                mu: s.forecast.mu().to_vec(),
                sigma: s.forecast.sigma().to_vec(),
            })
        })
        .collect();
    report.wall_time_ms = started.elapsed().as_millis() as u64;
    Ok(WindowOutcome { report, records, bands })
}

/// High-tier record ids of a committed window re-tiered at another risk
/// factor, using the tail fits stored with the window.
pub fn replay_high_ids(report: &FunnelReport, records: &[AnomalyRecord], risk_q: f64) -> Vec<String> {
    let mut thresholds: BTreeMap<&SeriesKey, f64> = BTreeMap::new();
    records
        .iter()
        .filter(|r| {
            let z = *thresholds.entry(&r.candidate.key).or_insert_with(|| {
                report
                    .fit_for(&r.candidate.key)
                    .map_or(f64::INFINITY, |f| f.at_risk(risk_q).z_q)
            });
            r.score() > z
        })
        .map(|r| r.id.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecast::SeasonalNaive;
    use crate::series::MetricPoint;
    use chrono::TimeZone;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2022, 5, 1, 0, 0, 0).unwrap()
    }

    #[test]
    fn empty_source_gives_zero_report() {
        let source: BTreeMap<SeriesKey, Vec<MetricPoint>> = BTreeMap::new();
        let model = SeasonalNaive::new(12);
        let out = run_window(&source, &model, &WindowConfig::default(), t0()).unwrap();
        assert_eq!(out.report.points_total, 0);
        assert_eq!(out.report.stage1_count, 0);
        assert_eq!(out.report.high_count + out.report.low_count, 0);
        assert!(out.report.gpd_fit.is_none());
        assert!(out.records.is_empty());
    }

    #[test]
    fn zero_horizon_is_rejected() {
        let source: BTreeMap<SeriesKey, Vec<MetricPoint>> = BTreeMap::new();
        let config = WindowConfig {
            horizon: 0,
            ..WindowConfig::default()
        };
        assert!(matches!(
            run_window(&source, &SeasonalNaive::new(12), &config, t0()),
            Err(PipelineError::EmptyWindow)
        ));
    }
}

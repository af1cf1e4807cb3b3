use chrono::{DateTime, Duration, Utc};

use super::{build_model, ModelKind, PipelineError};
use crate::forecast::{ForecastModel, Model, TrainConfig, TrainReport};
use crate::ingest::SeriesSource;
use crate::series::{align_to_grid, impute, ImputationPolicy, RegularSeries};

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub report: TrainReport,
    /// Series with no observation in the span, left out of training.
    pub skipped: usize,
}

/// Fit a model of `kind` on every series of `source` (optionally one metric)
/// over `[end - span, end)`, aligned to `interval` and median-imputed.
pub fn train_on_source(
    source: &dyn SeriesSource,
    metric_name: Option<&str>,
    interval: Duration,
    span: Duration,
    end: DateTime<Utc>,
    kind: ModelKind,
    config: &TrainConfig,
) -> Result<TrainOutcome, PipelineError> {
    if span <= Duration::zero() {
        return Err(PipelineError::Invalid("training span must be positive".into()));
    }
    let start = end - span;
    let mut keys = source.keys();
    keys.retain(|k| metric_name.is_none_or(|m| k.metric_name == m));
    keys.sort();
    let mut series: Vec<RegularSeries> = Vec::with_capacity(keys.len());
    let mut skipped = 0;
    for key in keys {
        let points = source.points_in(&key, start, end)?;
        if points.is_empty() {
            skipped += 1;
            continue;
        }
        let aligned = align_to_grid(&points, key, interval, start, end)?;
        series.push(impute(&aligned, ImputationPolicy::Median)?);
    }
    let mut model = build_model(kind, config.clone())?;
    let report = model.fit(&series, config)?;
    Ok(TrainOutcome { model, report, skipped })
}

//! Canonical time-series representation.
//!
//! A [`RegularSeries`] is a fixed-interval grid of optional values anchored at
//! `start`; slot `i` always corresponds to `start + i * interval`. Raw
//! [`MetricPoint`]s are bucketed onto a grid with [`align_to_grid`] and gaps are
//! filled with [`impute`].

use std::fmt;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SeriesError {
    #[error("metric_name must not be empty")]
    EmptyMetricName,
    #[error("non-finite metric value {0}")]
    NonFiniteValue(f64),
    #[error("invalid span: {0}")]
    InvalidSpan(String),
    #[error("all slots are gaps; nothing to impute from")]
    AllGaps,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("invalid duration {0:?}")]
    InvalidDuration(String),
}

/// Identity of one univariate series.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawSeriesKey")]
pub struct SeriesKey {
    pub provider_id: String,
    #[serde(default)]
    pub provider_id2: String,
    pub resource_region: String,
    pub metric_name: String,
    pub dimension: String,
    pub dimension_value: String,
}

#[derive(Deserialize)]
struct RawSeriesKey {
    provider_id: String,
    #[serde(default)]
    provider_id2: String,
    resource_region: String,
    metric_name: String,
    dimension: String,
    dimension_value: String,
}

impl TryFrom<RawSeriesKey> for SeriesKey {
    type Error = SeriesError;

    fn try_from(raw: RawSeriesKey) -> Result<Self, Self::Error> {
        SeriesKey::new(
            raw.provider_id,
            raw.provider_id2,
            raw.resource_region,
            raw.metric_name,
            raw.dimension,
            raw.dimension_value,
        )
    }
}

impl SeriesKey {
    pub fn new(
        provider_id: impl Into<String>,
        provider_id2: impl Into<String>,
        resource_region: impl Into<String>,
        metric_name: impl Into<String>,
        dimension: impl Into<String>,
        dimension_value: impl Into<String>,
    ) -> Result<Self, SeriesError> {
        let metric_name = metric_name.into();
        if metric_name.is_empty() {
            return Err(SeriesError::EmptyMetricName);
        }
        Ok(Self {
            provider_id: provider_id.into(),
            provider_id2: provider_id2.into(),
            resource_region: resource_region.into(),
            metric_name,
            dimension: dimension.into(),
            dimension_value: dimension_value.into(),
        })
    }

    /// Stable hex digest of all six fields. Used for store directories and record ids.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for field in [
            &self.provider_id,
            &self.provider_id2,
            &self.resource_region,
            &self.metric_name,
            &self.dimension,
            &self.dimension_value,
        ] {
            hasher.update((field.len() as u64).to_le_bytes());
            hasher.update(field.as_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

impl fmt::Display for SeriesKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}/{}[{}={}]",
            self.provider_id,
            self.provider_id2,
            self.resource_region,
            self.metric_name,
            self.dimension,
            self.dimension_value
        )
    }
}

/// One observed sample. The value is always finite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMetricPoint")]
pub struct MetricPoint {
    pub timestamp: DateTime<Utc>,
    pub value: f64,
}

#[derive(Deserialize)]
struct RawMetricPoint {
    timestamp: DateTime<Utc>,
    value: f64,
}

impl TryFrom<RawMetricPoint> for MetricPoint {
    type Error = SeriesError;

    fn try_from(raw: RawMetricPoint) -> Result<Self, Self::Error> {
        MetricPoint::new(raw.timestamp, raw.value)
    }
}

impl MetricPoint {
    pub fn new(timestamp: DateTime<Utc>, value: f64) -> Result<Self, SeriesError> {
        if !value.is_finite() {
            return Err(SeriesError::NonFiniteValue(value));
        }
        Ok(Self { timestamp, value })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputationPolicy {
    Zero,
    #[default]
    Median,
}

/// Fixed-interval series with explicit gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularSeries {
    key: SeriesKey,
    start: DateTime<Utc>,
    interval_seconds: i64,
    values: Vec<Option<f64>>,
    imputed_mask: Vec<usize>,
}

impl RegularSeries {
    pub fn new(
        key: SeriesKey,
        start: DateTime<Utc>,
        interval: Duration,
        values: Vec<Option<f64>>,
    ) -> Result<Self, SeriesError> {
        if interval <= Duration::zero() {
            return Err(SeriesError::InvalidSpan(format!(
                "interval must be positive, got {}s",
                interval.num_seconds()
            )));
        }
        if let Some(v) = values.iter().flatten().find(|v| !v.is_finite()) {
            return Err(SeriesError::NonFiniteValue(*v));
        }
        Ok(Self {
            key,
            start,
            interval_seconds: interval.num_seconds(),
            values,
            imputed_mask: Vec::new(),
        })
    }

    /// Gap-free series from plain values.
    pub fn from_values(
        key: SeriesKey,
        start: DateTime<Utc>,
        interval: Duration,
        values: &[f64],
    ) -> Result<Self, SeriesError> {
        Self::new(key, start, interval, values.iter().map(|v| Some(*v)).collect())
    }

    pub fn key(&self) -> &SeriesKey {
        &self.key
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    pub fn interval(&self) -> Duration {
        Duration::seconds(self.interval_seconds)
    }

    pub fn end(&self) -> DateTime<Utc> {
        self.timestamp_at(self.values.len())
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn imputed_mask(&self) -> &[usize] {
        &self.imputed_mask
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn timestamp_at(&self, slot: usize) -> DateTime<Utc> {
        self.start + Duration::seconds(self.interval_seconds * slot as i64)
    }

    /// Slot index of an instant on the grid, if it falls exactly on one.
    pub fn slot_of(&self, t: DateTime<Utc>) -> Option<usize> {
        let offset = (t - self.start).num_seconds();
        if offset < 0 || offset % self.interval_seconds != 0 {
            return None;
        }
        let slot = (offset / self.interval_seconds) as usize;
        (slot < self.values.len()).then_some(slot)
    }

    pub fn gap_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    pub fn is_gap_free(&self) -> bool {
        self.values.iter().all(Option::is_some)
    }

    pub fn observed(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().flatten().copied()
    }

    /// Plain values when the series has no gaps.
    pub fn dense(&self) -> Option<Vec<f64>> {
        self.values.iter().copied().collect()
    }

    /// Largest absolute observed value, at least 1.
    pub fn scale(&self) -> f64 {
        self.observed().fold(1.0_f64, |acc, v| acc.max(v.abs()))
    }

    /// Sub-series over `[from, to)` slots. The imputation mask is re-based.
    pub fn slice(&self, from: usize, to: usize) -> RegularSeries {
        let to = to.min(self.values.len());
        let from = from.min(to);
        RegularSeries {
            key: self.key.clone(),
            start: self.timestamp_at(from),
            interval_seconds: self.interval_seconds,
            values: self.values[from..to].to_vec(),
            imputed_mask: self
                .imputed_mask
                .iter()
                .filter(|&&i| i >= from && i < to)
                .map(|i| i - from)
                .collect(),
        }
    }
}

/// Bucket raw points onto the grid `[start, end)` at `interval`.
///
/// Points sharing a bucket are averaged; empty buckets become gaps; points
/// outside the span are dropped.
pub fn align_to_grid(
    points: &[MetricPoint],
    key: SeriesKey,
    interval: Duration,
    start: DateTime<Utc>,
    end: DateTime<Utc>,
) -> Result<RegularSeries, SeriesError> {
    let step = interval.num_seconds();
    if step <= 0 {
        return Err(SeriesError::InvalidSpan("interval must be positive".into()));
    }
    if end <= start {
        return Err(SeriesError::InvalidSpan(format!("end {end} is not after start {start}")));
    }
    let span = (end - start).num_seconds();
    if span % step != 0 {
        return Err(SeriesError::InvalidSpan(format!(
            "span of {span}s is not a multiple of the {step}s interval"
        )));
    }
    let slots = (span / step) as usize;
    let mut sums = vec![0.0_f64; slots];
    let mut counts = vec![0_u32; slots];
    for p in points {
        if p.timestamp < start || p.timestamp >= end {
            continue;
        }
        let slot = ((p.timestamp - start).num_seconds().div_euclid(step)) as usize;
        sums[slot] += p.value;
        counts[slot] += 1;
    }
    let values = sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| (c > 0).then(|| s / c as f64))
        .collect();
    RegularSeries::new(key, start, interval, values)
}

/// Median of a non-empty slice (mean of the two middle values for even counts).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Some(if sorted.len().is_multiple_of(2) {
        0.5 * (sorted[mid - 1] + sorted[mid])
    } else {
        sorted[mid]
    })
}

/// Fill gaps according to `policy`. Observed slots are never modified.
///
/// The median is taken over the observed values of `series` itself, so callers
/// pass the training window only.
pub fn impute(series: &RegularSeries, policy: ImputationPolicy) -> Result<RegularSeries, SeriesError> {
    let fill = match policy {
        ImputationPolicy::Zero => 0.0,
        ImputationPolicy::Median => {
            let observed: Vec<f64> = series.observed().collect();
            match median(&observed) {
                Some(m) => m,
                None if series.is_empty() => 0.0,
                None => return Err(SeriesError::AllGaps),
            }
        }
    };
    let mut out = series.clone();
    for (i, slot) in out.values.iter_mut().enumerate() {
        if slot.is_none() {
            *slot = Some(fill);
            out.imputed_mask.push(i);
        }
    }
    out.imputed_mask.sort_unstable();
    out.imputed_mask.dedup();
    Ok(out)
}

/// Symmetric mean absolute percentage error on the 0..=200 scale; a term where
/// both forecast and actual are zero contributes 0.
pub fn smape(forecast: &[f64], actual: &[f64]) -> Result<f64, SeriesError> {
    if forecast.len() != actual.len() {
        return Err(SeriesError::LengthMismatch {
            left: forecast.len(),
            right: actual.len(),
        });
    }
    if forecast.is_empty() {
        return Err(SeriesError::EmptyInput);
    }
    let total: f64 = forecast
        .iter()
        .zip(actual)
        .map(|(f, a)| {
            let denom = f.abs() + a.abs();
            if denom == 0.0 {
                0.0
            } else {
                2.0 * (f - a).abs() / denom
            }
        })
        .sum();
    Ok(100.0 * total / forecast.len() as f64)
}

/// Parse a signed duration such as `5m`, `1h`, `7d`, `30s` or `-1h`.
pub fn parse_duration(text: &str) -> Result<Duration, SeriesError> {
    let bad = || SeriesError::InvalidDuration(text.to_string());
    let trimmed = text.trim();
    let (sign, body) = match trimmed.strip_prefix('-') {
        Some(rest) => (-1, rest),
        None => (1, trimmed),
    };
    let split = body.find(|c: char| !c.is_ascii_digit()).ok_or_else(bad)?;
    let (digits, unit) = body.split_at(split);
    let amount: i64 = digits.parse().map_err(|_| bad())?;
    let seconds = match unit {
        "s" => 1,
        "m" | "min" => 60,
        "h" => 3600,
        "d" => 86_400,
        "w" => 604_800,
        _ => return Err(bad()),
    };
    Ok(Duration::seconds(sign * amount * seconds))
}

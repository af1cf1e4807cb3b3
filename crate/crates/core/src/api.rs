//! Request and response bodies of the HTTP interface.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::evt::{EvtConfig, Tier};
use crate::pipeline::{AnomalyRecord, ModelKind, Verdict};
use crate::series::MetricPoint;

pub const API_PREFIX: &str = "/api/v1";

/// Error body: a stable `code`, a human message and the offending field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_loaded: bool,
    pub model: Option<String>,
    pub windows: usize,
    pub risk_q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub series: usize,
    pub points_appended: usize,
    pub gaps: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRequest {
    pub metric: Option<String>,
    /// Training span such as `7d`; the configured window when absent.
    pub window: Option<String>,
    /// End of the span; the latest ingested point when absent.
    pub end: Option<DateTime<Utc>>,
    pub model: Option<ModelKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub model: String,
    pub metric_name: Option<String>,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    pub series_used: usize,
    pub series_skipped: usize,
    pub final_nll: f64,
    pub epochs: usize,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TierFilter {
    High,
    Low,
    #[default]
    All,
}

impl TierFilter {
    pub fn admits(self, tier: Tier) -> bool {
        match self {
            TierFilter::All => true,
            TierFilter::High => tier == Tier::High,
            TierFilter::Low => tier == Tier::Low,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyList {
    pub count: usize,
    pub records: Vec<AnomalyRecord>,
}

/// Forecast band of the record's series over its window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandView {
    pub start: DateTime<Utc>,
    pub interval_seconds: i64,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyContext {
    pub record: AnomalyRecord,
    /// Raw points within six hours either side of the anomaly.
    pub points: Vec<MetricPoint>,
    pub band: Option<BandView>,
    pub band_z: f64,
    pub z_q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRequest {
    pub id: String,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskFactor {
    pub risk_q: f64,
    pub quantile: f64,
    pub evt: EvtConfig,
}

/// Either spelling; both must agree when given together.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RiskFactorUpdate {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub risk_q: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quantile: Option<f64>,
}

/// One line of the risk-factor audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub time: DateTime<Utc>,
    pub field: String,
    pub previous: f64,
    pub value: f64,
}

/// High-tier count of a committed window replayed at another quantile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRow {
    pub quantile: f64,
    pub high_count: usize,
    pub anomaly_percent: f64,
    pub z_q: Option<f64>,
}

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Duration, Utc};
use serde::Deserialize;
use serde::de::DeserializeOwned;

use sentinel_core::api::{
    AnomalyContext, AnomalyList, AuditEntry, BandView, FeedbackRequest, Health, IngestSummary, ReplayRow, RiskFactor,
    RiskFactorUpdate, TierFilter, TrainRequest, TrainSummary,
};
use sentinel_core::ingest::SeriesSource;
use sentinel_core::pipeline::{replay_high_ids, FunnelReport, PipelineError};

use crate::error::ApiError;
use crate::state::AppState;

type AppResult<T> = Result<Json<T>, ApiError>;

const CONTEXT_HOURS: i64 = 6;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/v1/health", get(health))
        .route("/api/v1/ingest", post(ingest))
        .route("/api/v1/train", post(train))
        .route("/api/v1/infer", post(infer))
        .route("/api/v1/anomalies", get(anomalies))
        .route("/api/v1/anomalies/{id}/context", get(context))
        .route("/api/v1/feedback", post(feedback))
        .route("/api/v1/config/risk-factor", get(risk_factor).put(set_risk_factor))
        .route("/api/v1/config/risk-factor/audit", get(audit))
        .route("/api/v1/reports/windows", get(windows))
        .route("/api/v1/reports/funnel", get(funnel))
        .route("/api/v1/reports/sweep", get(sweep))
        .with_state(state)
}

fn parse_time(field: &str, text: &str) -> Result<DateTime<Utc>, ApiError> {
    DateTime::parse_from_rfc3339(text)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| ApiError::bad_request(field, format!("{field}: {e}")))
}

fn parse_opt_time(field: &str, text: Option<&str>) -> Result<Option<DateTime<Utc>>, ApiError> {
    text.map(|t| parse_time(field, t)).transpose()
}

fn parse_body<T: DeserializeOwned + Default>(body: &[u8]) -> Result<T, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request("body", e.to_string()))
}

#[derive(Debug, Default, Deserialize)]
struct WindowQuery {
    window: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
struct AnomalyQuery {
    tier: Option<String>,
    from: Option<String>,
    to: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
struct SweepQuery {
    window: Option<String>,
    grid: Option<String>,
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    Json(state.health())
}

async fn ingest(State(state): State<Arc<AppState>>, body: Bytes) -> AppResult<IngestSummary> {
    Ok(Json(state.ingest(body.to_vec()).await?))
}

async fn train(State(state): State<Arc<AppState>>, body: Bytes) -> AppResult<TrainSummary> {
    let request: TrainRequest = parse_body(&body)?;
    Ok(Json(state.train(request).await?))
}

async fn infer(State(state): State<Arc<AppState>>, Query(q): Query<WindowQuery>) -> AppResult<FunnelReport> {
    let start = parse_opt_time("window", q.window.as_deref())?;
    Ok(Json(state.infer(start).await?))
}

async fn anomalies(State(state): State<Arc<AppState>>, Query(q): Query<AnomalyQuery>) -> AppResult<AnomalyList> {
    let tier = match q.tier.as_deref() {
        None => TierFilter::All,
        Some(t) => serde_json::from_value(serde_json::Value::String(t.to_ascii_lowercase()))
            .map_err(|_| ApiError::bad_request("tier", format!("tier must be high, low or all, got {t}")))?,
    };
    let from = parse_opt_time("from", q.from.as_deref())?;
    let to = parse_opt_time("to", q.to.as_deref())?;
    let snapshot = state.snapshot();
    let mut records: Vec<_> = snapshot
        .windows
        .values()
        .flat_map(|w| w.records.iter())
        .filter(|r| tier.admits(r.tier))
        .filter(|r| from.is_none_or(|f| r.candidate.timestamp >= f))
        .filter(|r| to.is_none_or(|t| r.candidate.timestamp < t))
        .cloned()
        .collect();
    records.sort_by(|a, b| {
        (a.candidate.timestamp, &a.candidate.key).cmp(&(b.candidate.timestamp, &b.candidate.key))
    });
    Ok(Json(AnomalyList {
        count: records.len(),
        records,
    }))
}

async fn context(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> AppResult<AnomalyContext> {
    let snapshot = state.snapshot();
    let (window, record) = snapshot.record(&id).ok_or_else(|| PipelineError::NotFound(id.clone()))?;
    let record = record.clone();
    let band = window.bands.iter().find(|b| b.key == record.candidate.key).map(|b| BandView {
        start: b.start,
        interval_seconds: b.interval_seconds,
        lower: b.mu.iter().zip(&b.sigma).map(|(m, s)| m - record.band_z * s).collect(),
        upper: b.mu.iter().zip(&b.sigma).map(|(m, s)| m + record.band_z * s).collect(),
        mu: b.mu.clone(),
        sigma: b.sigma.clone(),
    });
    let at = record.candidate.timestamp;
    let key = record.candidate.key.clone();
    let store = state.store.clone();
    let points = tokio::task::spawn_blocking(move || {
        store.points_in(&key, at - Duration::hours(CONTEXT_HOURS), at + Duration::hours(CONTEXT_HOURS))
    })
    .await?
    .map_err(PipelineError::from)?;
    Ok(Json(AnomalyContext {
        band_z: record.band_z,
        z_q: record.z_q_at_detection,
        record,
        points,
        band,
    }))
}

async fn feedback(State(state): State<Arc<AppState>>, body: Bytes) -> AppResult<sentinel_core::pipeline::AnomalyRecord> {
    let request: FeedbackRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request("body", e.to_string()))?;
    Ok(Json(state.feedback(request).await?))
}

async fn risk_factor(State(state): State<Arc<AppState>>) -> Json<RiskFactor> {
    Json(state.risk_factor())
}

async fn set_risk_factor(State(state): State<Arc<AppState>>, body: Bytes) -> AppResult<RiskFactor> {
    let update: RiskFactorUpdate =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request("body", e.to_string()))?;
    let risk_q = match (update.risk_q, update.quantile) {
        (Some(r), None) => r,
        (None, Some(q)) => 1.0 - q,
        (Some(r), Some(q)) if (r - (1.0 - q)).abs() <= 1e-12 => r,
        (Some(_), Some(_)) => return Err(ApiError::bad_request("quantile", "risk_q and quantile disagree")),
        (None, None) => return Err(ApiError::bad_request("risk_q", "risk_q or quantile is required")),
    };
    Ok(Json(state.set_risk_factor(risk_q).await?))
}

async fn audit(State(state): State<Arc<AppState>>) -> AppResult<Vec<AuditEntry>> {
    Ok(Json(state.audit_log()?))
}

async fn windows(State(state): State<Arc<AppState>>) -> Json<Vec<DateTime<Utc>>> {
    Json(state.snapshot().windows.keys().copied().collect())
}

fn committed_window(
    state: &AppState,
    window: Option<&str>,
) -> Result<Arc<crate::state::CommittedWindow>, ApiError> {
    let snapshot = state.snapshot();
    let found = match parse_opt_time("window", window)? {
        Some(start) => snapshot.windows.get(&start),
        None => snapshot.windows.values().next_back(),
    };
    found
        .cloned()
        .ok_or_else(|| PipelineError::NotFound(format!("window {}", window.unwrap_or("latest"))).into())
}

async fn funnel(State(state): State<Arc<AppState>>, Query(q): Query<WindowQuery>) -> AppResult<FunnelReport> {
    Ok(Json(committed_window(&state, q.window.as_deref())?.report.clone()))
}

/// High-tier counts of a committed window replayed over a quantile grid.
async fn sweep(State(state): State<Arc<AppState>>, Query(q): Query<SweepQuery>) -> AppResult<Vec<ReplayRow>> {
    let window = committed_window(&state, q.window.as_deref())?;
    let grid = match q.grid.as_deref() {
        None => vec![0.99, 0.995, 0.998, 0.9995, 0.9999],
        Some(text) => text
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ApiError::bad_request("grid", e.to_string()))?,
    };
    if grid.iter().any(|g| !(*g > 0.5 && *g < 1.0)) {
        return Err(ApiError::bad_request("grid", "quantiles must lie in (0.5, 1)"));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(ApiError::bad_request("grid", "quantile grid must be ascending"));
    }
    let report = &window.report;
    let rows = grid
        .into_iter()
        .map(|quantile| {
            let risk_q = 1.0 - quantile;
            let high_count = replay_high_ids(report, &window.records, risk_q).len();
            ReplayRow {
                quantile,
                high_count,
                anomaly_percent: if report.points_total == 0 {
                    0.0
                } else {
                    100.0 * high_count as f64 / report.points_total as f64
                },
                z_q: report.gpd_fit.as_ref().map(|f| f.at_risk(risk_q).z_q),
            }
        })
        .collect();
    Ok(Json(rows))
}

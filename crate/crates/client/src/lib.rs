//! Thin async client for the service's HTTP interface.

use chrono::{DateTime, SecondsFormat, Utc};
use reqwest::{Method, RequestBuilder, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

pub use sentinel_core::api::*;
use sentinel_core::pipeline::{AnomalyRecord, FunnelReport, Verdict};

pub const DEFAULT_URL: &str = "http://127.0.0.1:7878";

#[derive(Debug, Error)]
pub enum ClientError {
    /// The service answered with an error body.
    #[error("{}: {}", .body.code, .body.message)]
    Api { status: StatusCode, body: ApiErrorBody },
    #[error("cannot reach service: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("unexpected response ({status}): {message}")]
    Decode { status: StatusCode, message: String },
}

impl ClientError {
    /// The service's error code, when there is one.
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api { body, .. } => Some(&body.code),
            _ => None,
        }
    }
}

fn rfc3339(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    pub fn new(base_url: &str) -> Self {
        Self {
            base: base_url.trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn request(&self, method: Method, path: &str) -> RequestBuilder {
        self.http.request(method, format!("{}{API_PREFIX}{path}", self.base))
    }

    async fn send<T: DeserializeOwned>(&self, request: RequestBuilder) -> Result<T, ClientError> {
        let response = request.send().await?;
        let status = response.status();
        let bytes = response.bytes().await?;
        if status.is_success() {
            return serde_json::from_slice(&bytes).map_err(|e| ClientError::Decode {
                status,
                message: e.to_string(),
            });
        }
        match serde_json::from_slice::<ApiErrorBody>(&bytes) {
            Ok(body) => Err(ClientError::Api { status, body }),
            Err(_) => Err(ClientError::Decode {
                status,
                message: String::from_utf8_lossy(&bytes).into_owned(),
            }),
        }
    }

    async fn send_json<B: Serialize, T: DeserializeOwned>(
        &self,
        method: Method,
        path: &str,
        body: &B,
    ) -> Result<T, ClientError> {
        self.send(self.request(method, path).json(body)).await
    }

    pub async fn health(&self) -> Result<Health, ClientError> {
        self.send(self.request(Method::GET, "/health")).await
    }

    /// Post a metric-envelope document (one envelope or an array).
    pub async fn ingest(&self, document: Vec<u8>) -> Result<IngestSummary, ClientError> {
        let req = self
            .request(Method::POST, "/ingest")
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(document);
        self.send(req).await
    }

    pub async fn train(&self, request: &TrainRequest) -> Result<TrainSummary, ClientError> {
        self.send_json(Method::POST, "/train", request).await
    }

    /// Run one window; the latest complete one when `window` is `None`.
    pub async fn infer(&self, window: Option<DateTime<Utc>>) -> Result<FunnelReport, ClientError> {
        let mut req = self.request(Method::POST, "/infer");
        if let Some(w) = window {
            req = req.query(&[("window", rfc3339(w))]);
        }
        self.send(req).await
    }

    pub async fn anomalies(
        &self,
        tier: TierFilter,
        from: Option<DateTime<Utc>>,
        to: Option<DateTime<Utc>>,
    ) -> Result<AnomalyList, ClientError> {
        let tier = match tier {
            TierFilter::High => "high",
            TierFilter::Low => "low",
            TierFilter::All => "all",
        };
        let mut query = vec![("tier", tier.to_string())];
        query.extend(from.map(|t| ("from", rfc3339(t))));
        query.extend(to.map(|t| ("to", rfc3339(t))));
        self.send(self.request(Method::GET, "/anomalies").query(&query)).await
    }

    pub async fn context(&self, id: &str) -> Result<AnomalyContext, ClientError> {
        self.send(self.request(Method::GET, &format!("/anomalies/{id}/context"))).await
    }

    pub async fn feedback(&self, id: &str, verdict: Verdict) -> Result<AnomalyRecord, ClientError> {
        let body = FeedbackRequest {
            id: id.to_string(),
            verdict,
        };
        self.send_json(Method::POST, "/feedback", &body).await
    }

    pub async fn risk_factor(&self) -> Result<RiskFactor, ClientError> {
        self.send(self.request(Method::GET, "/config/risk-factor")).await
    }

    pub async fn set_risk_factor(&self, risk_q: f64) -> Result<RiskFactor, ClientError> {
        let body = RiskFactorUpdate {
            risk_q: Some(risk_q),
            quantile: None,
        };
        self.send_json(Method::PUT, "/config/risk-factor", &body).await
    }

    pub async fn risk_audit(&self) -> Result<Vec<AuditEntry>, ClientError> {
        self.send(self.request(Method::GET, "/config/risk-factor/audit")).await
    }

    pub async fn windows(&self) -> Result<Vec<DateTime<Utc>>, ClientError> {
        self.send(self.request(Method::GET, "/reports/windows")).await
    }

    /// Funnel report of a committed window; the latest when `window` is `None`.
    pub async fn funnel(&self, window: Option<DateTime<Utc>>) -> Result<FunnelReport, ClientError> {
        let mut req = self.request(Method::GET, "/reports/funnel");
        if let Some(w) = window {
            req = req.query(&[("window", rfc3339(w))]);
        }
        self.send(req).await
    }

    /// Replay a committed window over a quantile grid.
    pub async fn sweep(&self, window: Option<DateTime<Utc>>, grid: &[f64]) -> Result<Vec<ReplayRow>, ClientError> {
        let grid = grid.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        let mut query = vec![("grid", grid)];
        query.extend(window.map(|w| ("window", rfc3339(w))));
        self.send(self.request(Method::GET, "/reports/sweep").query(&query)).await
    }
}

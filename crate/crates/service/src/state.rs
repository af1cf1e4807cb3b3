use std::collections::{BTreeMap, HashMap};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration as StdDuration;

use axum::http::StatusCode;
use chrono::{DateTime, Duration, DurationRound, Utc};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

use sentinel_core::api::{AuditEntry, FeedbackRequest, Health, IngestSummary, RiskFactor, TrainRequest, TrainSummary};
use sentinel_core::evt::EvtConfig;
use sentinel_core::forecast::{ForecastModel, ModelFile};
use sentinel_core::ingest::{parse_metric_json, SeriesSource, SeriesStore};
use sentinel_core::pipeline::{
    run_window, train_on_source, AnomalyRecord, FunnelReport, PipelineError, ReportStore, SeriesBand, Verdict,
    VerdictEntry, WindowOutcome,
};
use sentinel_core::series::parse_duration;
use sentinel_core::write_atomic;

use crate::config::Settings;
use crate::error::ApiError;

/// A committed window as served to readers.
#[derive(Debug, Clone)]
pub struct CommittedWindow {
    pub report: FunnelReport,
    pub records: Vec<AnomalyRecord>,
    pub bands: Vec<SeriesBand>,
}

/// Immutable view of every committed window; replaced wholesale on change.
#[derive(Debug, Clone, Default)]
pub struct Snapshot {
    pub windows: BTreeMap<DateTime<Utc>, Arc<CommittedWindow>>,
    index: HashMap<String, (DateTime<Utc>, usize)>,
}

impl Snapshot {
    fn insert(&mut self, window: CommittedWindow) {
        let start = window.report.window_start;
        for (i, r) in window.records.iter().enumerate() {
            self.index.insert(r.id.clone(), (start, i));
        }
        self.windows.insert(start, Arc::new(window));
    }

    pub fn record(&self, id: &str) -> Option<(&Arc<CommittedWindow>, &AnomalyRecord)> {
        let (start, i) = self.index.get(id)?;
        let w = self.windows.get(start)?;
        Some((w, &w.records[*i]))
    }

    fn with_record(&self, record: AnomalyRecord) -> Snapshot {
        let mut next = self.clone();
        if let Some((start, i)) = self.index.get(&record.id).copied() {
            let mut w = (*next.windows[&start]).clone();
            w.records[i] = record;
            next.windows.insert(start, Arc::new(w));
        }
        next
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RuntimeSettings {
    risk_q: f64,
}

pub struct AppState {
    pub settings: Settings,
    pub store: Arc<SeriesStore>,
    pub reports: Arc<ReportStore>,
    model: RwLock<Option<Arc<ModelFile>>>,
    evt: RwLock<EvtConfig>,
    snapshot: RwLock<Arc<Snapshot>>,
    /// One pipeline execution (or training) at a time.
    run_lock: Mutex<()>,
    /// Serializes verdict writes.
    feedback_lock: Mutex<()>,
    settings_lock: Mutex<()>,
    pause_before_commit: Option<StdDuration>,
}

fn load_window(reports: &ReportStore, start: DateTime<Utc>, verdicts: &BTreeMap<String, VerdictEntry>) -> Result<Option<CommittedWindow>, PipelineError> {
    let Some(report) = reports.report(start)? else {
        return Ok(None);
    };
    let mut records = reports.records(start)?;
    for r in &mut records {
        if let Some(v) = verdicts.get(&r.id) {
            r.verdict = v.verdict;
            r.verdict_time = Some(v.verdict_time);
        }
    }
    let bands = reports.bands(start)?;
    Ok(Some(CommittedWindow { report, records, bands }))
}

fn append_line(path: &PathBuf, line: &str) -> std::io::Result<()> {
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    file.write_all(format!("{line}\n").as_bytes())?;
    file.sync_data()
}

impl AppState {
    /// Open the stores, load the model and every committed window.
    pub fn open(settings: Settings, pause_before_commit: Option<StdDuration>) -> Result<Self, PipelineError> {
        std::fs::create_dir_all(&settings.data_dir)?;
        let store = SeriesStore::open(&settings.store_dir)?;
        let reports = ReportStore::open(&settings.report_dir)?;
        let model = if settings.model_path.exists() {
            Some(Arc::new(ModelFile::load(&settings.model_path)?))
        } else {
            None
        };
        let mut evt = settings.window.evt.clone();
        let runtime_path = settings.data_dir.join("settings.json");
        if runtime_path.exists() {
            let bytes = std::fs::read(&runtime_path)?;
            let saved: RuntimeSettings = serde_json::from_slice(&bytes).map_err(|e| PipelineError::Corrupt {
                path: runtime_path.display().to_string(),
                message: e.to_string(),
            })?;
            evt = evt.with_risk_q(saved.risk_q);
        }
        let verdicts = reports.verdicts()?;
        let mut snapshot = Snapshot::default();
        for start in reports.windows()? {
            if let Some(w) = load_window(&reports, start, &verdicts)? {
                snapshot.insert(w);
            }
        }
        Ok(Self {
            settings,
            store: Arc::new(store),
            reports: Arc::new(reports),
            model: RwLock::new(model),
            evt: RwLock::new(evt),
            snapshot: RwLock::new(Arc::new(snapshot)),
            run_lock: Mutex::new(()),
            feedback_lock: Mutex::new(()),
            settings_lock: Mutex::new(()),
            pause_before_commit,
        })
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().clone()
    }

    pub fn model(&self) -> Option<Arc<ModelFile>> {
        self.model.read().clone()
    }

    pub fn evt(&self) -> EvtConfig {
        self.evt.read().clone()
    }

    pub fn window_len(&self) -> Duration {
        self.settings.window.interval() * self.settings.window.horizon as i32
    }

    pub fn health(&self) -> Health {
        let model = self.model();
        Health {
            status: "ok".into(),
            model_loaded: model.is_some(),
            model: model.map(|m| m.model.name().to_string()),
            windows: self.snapshot().windows.len(),
            risk_q: self.evt().risk_q,
        }
    }

    pub async fn ingest(self: &Arc<Self>, body: Vec<u8>) -> Result<IngestSummary, ApiError> {
        let state = self.clone();
        tokio::task::spawn_blocking(move || {
            let parsed = parse_metric_json(&body)?;
            let mut summary = IngestSummary {
                series: parsed.len(),
                points_appended: 0,
                gaps: 0,
            };
            for s in &parsed {
                summary.gaps += s.gap_count();
                summary.points_appended += state.store.append(&s.key, &s.metric_points())?;
            }
            Ok(summary)
        })
        .await?
    }

    /// Latest ingested timestamp over all series.
    fn latest_point(&self) -> Option<DateTime<Utc>> {
        self.store.keys().iter().filter_map(|k| self.store.last_timestamp(k)).max()
    }

    pub async fn train(self: &Arc<Self>, request: TrainRequest) -> Result<TrainSummary, ApiError> {
        let _guard = self.run_lock.lock().await;
        let span = match &request.window {
            Some(text) => {
                let d = parse_duration(text).map_err(|e| ApiError::bad_request("window", e.to_string()))?;
                if d <= Duration::zero() {
                    return Err(ApiError::bad_request("window", "training window must be positive"));
                }
                d
            }
            None => self.settings.training_window,
        };
        let interval = self.settings.window.interval();
        let end = match request.end.or_else(|| self.latest_point().map(|t| t + interval)) {
            Some(t) => t
                .duration_trunc(interval)
                .map_err(|e| ApiError::bad_request("end", e.to_string()))?,
            None => {
                return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "NoData", "no series have been ingested"));
            }
        };
        let state = self.clone();
        let kind = request.model.unwrap_or(self.settings.model);
        let metric = request.metric.clone();
        let (file, summary) = tokio::task::spawn_blocking(move || -> Result<_, ApiError> {
            let out = train_on_source(
                state.store.as_ref(),
                metric.as_deref(),
                interval,
                span,
                end,
                kind,
                &state.settings.train,
            )?;
            let file = ModelFile::new(out.model, metric.clone());
            file.save(&state.settings.model_path).map_err(PipelineError::from)?;
            let summary = TrainSummary {
                model: file.model.name().to_string(),
                metric_name: metric,
                start: end - span,
                end,
                series_used: out.report.series_used,
                series_skipped: out.skipped,
                final_nll: out.report.final_nll,
                epochs: out.report.loss_curve.len(),
                wall_time_ms: out.report.wall_time_ms,
            };
            Ok((file, summary))
        })
        .await??;
        *self.model.write() = Some(Arc::new(file));
        tracing::info!(model = %summary.model, series = summary.series_used, "model trained");
        Ok(summary)
    }

    /// Start of the window that ends at the last window boundary at or
    /// before `now`.
    pub fn latest_complete_window(&self, now: DateTime<Utc>) -> DateTime<Utc> {
        let len = self.window_len().num_seconds();
        let end = now.timestamp().div_euclid(len) * len;
        DateTime::from_timestamp(end - len, 0).expect("in range")
    }

    /// The latest complete window covered by ingested data.
    pub fn default_window(&self) -> Result<DateTime<Utc>, ApiError> {
        let latest = self.latest_point().ok_or(PipelineError::EmptyWindow)?;
        Ok(self.latest_complete_window(latest + self.settings.window.interval()))
    }

    /// Run and commit one window, then publish it to readers.
    pub async fn infer(self: &Arc<Self>, start: Option<DateTime<Utc>>) -> Result<FunnelReport, ApiError> {
        let _guard = self.run_lock.lock().await;
        let model = self.model().ok_or(PipelineError::NoModel)?;
        let start = match start {
            Some(s) => s,
            None => self.default_window()?,
        };
        if start.timestamp() % self.settings.window.interval_seconds != 0 {
            return Err(ApiError::bad_request(
                "window",
                format!("{start} is not aligned to the {}s interval", self.settings.window.interval_seconds),
            ));
        }
        if self.reports.is_committed(start) {
            return Err(PipelineError::AlreadyCommitted(sentinel_core::pipeline::window_id(start)).into());
        }
        let mut config = self.settings.window.clone();
        config.evt = self.evt();
        config.metric_name = model.metric_name.clone();
        let state = self.clone();
        let pause = self.pause_before_commit;
        let window = tokio::task::spawn_blocking(move || -> Result<CommittedWindow, PipelineError> {
            let outcome: WindowOutcome = run_window(state.store.as_ref(), &model.model, &config, start)?;
            state.reports.commit_with(&outcome, || {
                if let Some(p) = pause {
                    std::thread::sleep(p);
                }
            })?;
            // ids are content hashes, so verdicts from an earlier run of
            // this window reattach
            let verdicts = state.reports.verdicts()?;
            let mut window = CommittedWindow {
                report: outcome.report,
                records: outcome.records,
                bands: outcome.bands,
            };
            for r in &mut window.records {
                if let Some(v) = verdicts.get(&r.id) {
                    r.verdict = v.verdict;
                    r.verdict_time = Some(v.verdict_time);
                }
            }
            Ok(window)
        })
        .await??;
        let report = window.report.clone();
        {
            let mut snap = self.snapshot.write();
            let mut next = (**snap).clone();
            next.insert(window);
            *snap = Arc::new(next);
        }
        tracing::info!(
            window = %start,
            stage1 = report.stage1_count,
            high = report.high_count,
            "window committed"
        );
        Ok(report)
    }

    pub async fn feedback(self: &Arc<Self>, request: FeedbackRequest) -> Result<AnomalyRecord, ApiError> {
        let _guard = self.feedback_lock.lock().await;
        let snapshot = self.snapshot();
        let (_, current) = snapshot
            .record(&request.id)
            .ok_or_else(|| PipelineError::NotFound(request.id.clone()))?;
        let mut record = current.clone();
        if request.verdict == Verdict::Unreviewed {
            return Err(ApiError::bad_request("verdict", "verdict must be confirmed or false_flag"));
        }
        if !record.apply_verdict(request.verdict, Utc::now())? {
            return Ok(record);
        }
        let entry = VerdictEntry {
            id: record.id.clone(),
            verdict: record.verdict,
            verdict_time: record.verdict_time.expect("set by apply_verdict"),
        };
        let reports = self.reports.clone();
        tokio::task::spawn_blocking(move || reports.append_verdict(&entry)).await??;
        let mut snap = self.snapshot.write();
        *snap = Arc::new(snap.with_record(record.clone()));
        Ok(record)
    }

    pub fn risk_factor(&self) -> RiskFactor {
        let evt = self.evt();
        RiskFactor {
            risk_q: evt.risk_q,
            quantile: 1.0 - evt.risk_q,
            evt,
        }
    }

    /// Persist the new risk factor and audit the change; later windows use it.
    pub async fn set_risk_factor(self: &Arc<Self>, risk_q: f64) -> Result<RiskFactor, ApiError> {
        if !(risk_q > 0.0 && risk_q < 0.5) {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "OutOfRange",
                format!("risk_q {risk_q} outside (0, 0.5)"),
            )
            .with_field("risk_q"));
        }
        let _guard = self.settings_lock.lock().await;
        let previous = self.evt().risk_q;
        let data_dir = self.settings.data_dir.clone();
        tokio::task::spawn_blocking(move || -> std::io::Result<()> {
            let saved = serde_json::to_vec(&RuntimeSettings { risk_q }).expect("settings serialize");
            write_atomic(&data_dir.join("settings.json"), &saved)?;
            let entry = AuditEntry {
                time: Utc::now(),
                field: "risk_q".into(),
                previous,
                value: risk_q,
            };
            append_line(&data_dir.join("audit.jsonl"), &serde_json::to_string(&entry).expect("entry serializes"))
        })
        .await??;
        {
            let mut evt = self.evt.write();
            *evt = evt.with_risk_q(risk_q);
        }
        tracing::info!(previous, risk_q, "risk factor changed");
        Ok(self.risk_factor())
    }

    /// Risk-factor changes, oldest first.
    pub fn audit_log(&self) -> std::io::Result<Vec<AuditEntry>> {
        let path = self.settings.data_dir.join("audit.jsonl");
        if !path.exists() {
            return Ok(Vec::new());
        }
        Ok(std::fs::read_to_string(path)?
            .lines()
            .filter_map(|l| serde_json::from_str(l).ok())
            .collect())
    }

    /// Wait for an in-flight window run to finish.
    pub async fn drain(&self) {
        let _guard = self.run_lock.lock().await;
        let _feedback = self.feedback_lock.lock().await;
    }
}

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Duration as StdDuration;

use chrono::{DateTime, Duration, TimeZone, Utc};
use tokio::sync::oneshot;

use sentinel_client::{Client, TierFilter, TrainRequest};
use sentinel_core::evt::Tier;
use sentinel_core::forecast::TrainConfig;
use sentinel_core::ingest::envelopes_from_series;
use sentinel_core::pipeline::{inject_anomalies, synth, InjectionSpec, ModelKind, TruthLabel, Verdict, WindowConfig};
use sentinel_core::series::RegularSeries;
use sentinel_service::{Server, ServiceConfig};

const STEP_MIN: i64 = 5;
const LEN: usize = 600;
const HORIZON: usize = 12;

fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2022, 5, 20, 0, 0, 0).unwrap()
}

fn at(slot: usize) -> DateTime<Utc> {
    t0() + Duration::minutes(STEP_MIN * slot as i64)
}

/// 20 sinusoid series; three carry one spike each in the last window.
fn dataset() -> (Vec<RegularSeries>, BTreeSet<TruthLabel>) {
    let series = synth::gapped_sinusoids(20, LEN, 48, 0.0, t0(), Duration::minutes(STEP_MIN), 11);
    let mut truth = BTreeSet::new();
    let out = series
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let spec = InjectionSpec {
                count: usize::from(i % 7 == 2),
                seed: i as u64,
                region: Some((LEN - HORIZON, LEN)),
                ..InjectionSpec::default()
            };
            let (m, labels) = inject_anomalies(s, &spec).unwrap();
            truth.extend(labels);
            m
        })
        .collect();
    (out, truth)
}

fn config(dir: &Path) -> ServiceConfig {
    ServiceConfig {
        listen: "127.0.0.1:0".into(),
        data_dir: dir.to_path_buf(),
        schedule: false,
        window: WindowConfig {
            interval_seconds: STEP_MIN * 60,
            horizon: HORIZON,
            ..WindowConfig::default()
        },
        train: TrainConfig {
            context_length: 96,
            season_length: 48,
            horizon: HORIZON,
            dilations: vec![1, 2, 4, 8, 16, 32],
            ..TrainConfig::default()
        },
        ..ServiceConfig::default()
    }
}

struct Running {
    client: Client,
    stop: Option<oneshot::Sender<()>>,
    task: tokio::task::JoinHandle<()>,
}

impl Running {
    async fn stop(mut self) {
        let _ = self.stop.take().unwrap().send(());
        self.task.await.unwrap();
    }
}

async fn start(dir: &Path, pause: Option<StdDuration>) -> Running {
    let settings = config(dir).validate().unwrap();
    let server = Server::bind(settings, pause).await.unwrap();
    let addr = server.local_addr().unwrap();
    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        server
            .run(async {
                let _ = rx.await;
            })
            .await
            .unwrap();
    });
    Running {
        client: Client::new(&format!("http://{addr}")),
        stop: Some(tx),
        task,
    }
}

async fn load_and_train(client: &Client) -> BTreeSet<TruthLabel> {
    let (series, truth) = dataset();
    let doc = serde_json::to_vec(&envelopes_from_series(&series, "Percent")).unwrap();
    let summary = client.ingest(doc).await.unwrap();
    assert_eq!(summary.series, 20);
    assert_eq!(summary.points_appended, 20 * LEN);
    let trained = client
        .train(&TrainRequest {
            window: Some("1d".into()),
            end: Some(at(LEN - HORIZON)),
            model: Some(ModelKind::SeasonalNaive),
            ..TrainRequest::default()
        })
        .await
        .unwrap();
    assert_eq!(trained.series_used, 20);
    truth
}

#[tokio::test(flavor = "multi_thread")]
async fn health_and_no_model() {
    let dir = tempfile::tempdir().unwrap();
    let s = start(dir.path(), None).await;
    let h = s.client.health().await.unwrap();
    assert_eq!(h.status, "ok");
    assert!(!h.model_loaded);
    let err = s.client.infer(Some(at(LEN - HORIZON))).await.unwrap_err();
    assert_eq!(err.code(), Some("NoModel"));
    assert!(err.to_string().contains("NoModel"));
    s.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn ingest_errors_carry_codes() {
    let dir = tempfile::tempdir().unwrap();
    let s = start(dir.path(), None).await;
    let err = s.client.ingest(b"{\"resource_type\": ".to_vec()).await.unwrap_err();
    assert_eq!(err.code(), Some("MalformedJson"));

    let doc = br#"{"schema_version":1,"resource_type":"r","resource_id":"","region":"x","unit":"u",
        "timeseries":[{"dimension":"d","dimension_value":"v","points":[]}]}"#;
    match s.client.ingest(doc.to_vec()).await.unwrap_err() {
        sentinel_client::ClientError::Api { body, .. } => {
            assert_eq!(body.code, "SchemaViolation");
            assert_eq!(body.field.as_deref(), Some("$.metric_name"));
        }
        other => panic!("unexpected {other:?}"),
    }

    let series = synth::gaussian_series(1, 10, 5.0, 1.0, t0(), Duration::minutes(5), 1);
    let doc = serde_json::to_vec(&envelopes_from_series(&series, "u")).unwrap();
    s.client.ingest(doc.clone()).await.unwrap();
    assert_eq!(s.client.ingest(doc).await.unwrap_err().code(), Some("OutOfOrder"));
    s.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn detect_review_and_tune() {
    let dir = tempfile::tempdir().unwrap();
    let s = start(dir.path(), None).await;
    let c = &s.client;
    let truth = load_and_train(c).await;
    assert_eq!(truth.len(), 3);
    assert!(c.health().await.unwrap().model_loaded);

    let window = at(LEN - HORIZON);
    let report = c.infer(Some(window)).await.unwrap();
    assert_eq!(report.points_total, 20 * HORIZON);
    assert_eq!(report.high_count + report.low_count, report.stage1_count);
    assert_eq!(c.infer(Some(window)).await.unwrap_err().code(), Some("AlreadyCommitted"));
    assert_eq!(c.funnel(None).await.unwrap(), report);

    let high = c.anomalies(TierFilter::High, None, None).await.unwrap();
    let all = c.anomalies(TierFilter::All, None, None).await.unwrap();
    let low = c.anomalies(TierFilter::Low, None, None).await.unwrap();
    assert!(high.records.iter().all(|r| r.tier == Tier::High));
    assert!(low.records.iter().all(|r| r.tier == Tier::Low));
    assert_eq!(high.count + low.count, all.count);
    assert_eq!(high.count, report.high_count);
    let found: BTreeSet<TruthLabel> = high
        .records
        .iter()
        .map(|r| TruthLabel {
            key: r.candidate.key.clone(),
            timestamp: r.candidate.timestamp,
        })
        .collect();
    assert!(truth.is_subset(&found));

    let first = truth.iter().next().unwrap().timestamp;
    let ranged = c.anomalies(TierFilter::High, Some(first), Some(first + Duration::minutes(5))).await.unwrap();
    assert!(ranged.records.iter().all(|r| r.candidate.timestamp == first));
    assert!(ranged.count >= 1);

    let record = &high.records[0];
    let ctx = c.context(&record.id).await.unwrap();
    assert_eq!(ctx.z_q, record.z_q_at_detection);
    let band = ctx.band.unwrap();
    assert_eq!(band.mu.len(), HORIZON);
    assert!(ctx.points.iter().any(|p| p.timestamp == record.candidate.timestamp));
    assert!(ctx.points.iter().all(|p| (p.timestamp - record.candidate.timestamp).num_hours().abs() <= 6));
    assert_eq!(c.context("nope").await.unwrap_err().code(), Some("NotFound"));

    let confirmed = c.feedback(&record.id, Verdict::Confirmed).await.unwrap();
    assert_eq!(confirmed.verdict, Verdict::Confirmed);
    let again = c.feedback(&record.id, Verdict::Confirmed).await.unwrap();
    assert_eq!(again.verdict_time, confirmed.verdict_time);
    assert_eq!(c.feedback(&record.id, Verdict::FalseFlag).await.unwrap_err().code(), Some("VerdictConflict"));
    assert_eq!(c.feedback("missing", Verdict::Confirmed).await.unwrap_err().code(), Some("NotFound"));

    let rows = c.sweep(None, &[0.99, 0.995, 0.998, 0.9995, 0.9999]).await.unwrap();
    assert!(rows.windows(2).all(|w| w[1].high_count <= w[0].high_count));
    let at_config = rows.iter().find(|r| (r.quantile - 0.998).abs() < 1e-12).unwrap();
    assert_eq!(at_config.high_count, report.high_count);

    assert_eq!(c.set_risk_factor(0.6).await.unwrap_err().code(), Some("OutOfRange"));
    let rf = c.set_risk_factor(0.01).await.unwrap();
    assert_eq!(rf.risk_q, 0.01);
    assert_eq!(c.risk_factor().await.unwrap().risk_q, 0.01);
    let audit = c.risk_audit().await.unwrap();
    assert_eq!(audit.len(), 1);
    assert_eq!((audit[0].previous, audit[0].value), (0.002, 0.01));

    // committed tiers are unaffected; the next window uses the new factor
    assert_eq!(c.funnel(Some(window)).await.unwrap().risk_q, 0.002);
    let next = c.infer(Some(at(LEN - 2 * HORIZON))).await.unwrap();
    assert_eq!(next.risk_q, 0.01);
    assert_eq!(c.anomalies(TierFilter::High, Some(window), None).await.unwrap().count, report.high_count);
    s.stop().await;

    // verdicts and the risk factor survive a restart
    let s = start(dir.path(), None).await;
    let reloaded = s.client.anomalies(TierFilter::All, None, None).await.unwrap();
    let r = reloaded.records.iter().find(|r| r.id == record.id).unwrap();
    assert_eq!(r.verdict, Verdict::Confirmed);
    assert_eq!(r.verdict_time, confirmed.verdict_time);
    assert_eq!(s.client.risk_factor().await.unwrap().risk_q, 0.01);
    assert_eq!(s.client.windows().await.unwrap().len(), 2);
    s.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn readers_see_committed_snapshots_only() {
    let dir = tempfile::tempdir().unwrap();
    let s = start(dir.path(), Some(StdDuration::from_millis(1500))).await;
    load_and_train(&s.client).await;
    let before = s.client.anomalies(TierFilter::All, None, None).await.unwrap();
    assert_eq!(before.count, 0);

    let runner = s.client.clone();
    let run = tokio::spawn(async move { runner.infer(Some(at(LEN - HORIZON))).await });
    tokio::time::sleep(StdDuration::from_millis(500)).await;
    let (a, b) = tokio::join!(
        s.client.anomalies(TierFilter::All, None, None),
        s.client.anomalies(TierFilter::All, None, None)
    );
    assert_eq!(a.unwrap(), before);
    assert_eq!(b.unwrap(), before);
    assert_eq!(s.client.funnel(None).await.unwrap_err().code(), Some("NotFound"));
    // the records file is on disk, the commit marker is not
    assert!(std::fs::read_dir(dir.path().join("reports"))
        .unwrap()
        .any(|e| e.unwrap().file_name().to_string_lossy().starts_with("anomalies-")));

    let report = run.await.unwrap().unwrap();
    let after = s.client.anomalies(TierFilter::All, None, None).await.unwrap();
    assert_eq!(after.count, report.stage1_count);
    s.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn invalid_query_parameters_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let s = start(dir.path(), None).await;
    let http = raw_get(&s.client, "/api/v1/anomalies?tier=medium").await;
    assert_eq!(http.0, 400);
    assert!(http.1.contains("\"field\":\"tier\""));
    let http = raw_get(&s.client, "/api/v1/reports/funnel?window=yesterday").await;
    assert_eq!(http.0, 400);
    assert!(http.1.contains("\"field\":\"window\""));
    s.stop().await;
}

/// Minimal HTTP/1.1 GET over a raw socket.
async fn raw_get(client: &Client, path: &str) -> (u16, String) {
    use tokio::io::{AsyncReadExt, AsyncWriteExt};
    let host = client.base_url().trim_start_matches("http://").to_string();
    let mut stream = tokio::net::TcpStream::connect(&host).await.unwrap();
    let req = format!("GET {path} HTTP/1.1\r\nHost: {host}\r\nConnection: close\r\n\r\n");
    stream.write_all(req.as_bytes()).await.unwrap();
    let mut buf = String::new();
    stream.read_to_string(&mut buf).await.unwrap();
    let status = buf.split_whitespace().nth(1).unwrap().parse().unwrap();
    (status, buf)
}

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Duration, TimeZone, Utc};
use sentinel_core::evt::Tier;
use sentinel_core::forecast::{ConvForecaster, ForecastModel, TrainConfig};
use sentinel_core::ingest::SeriesStore;
use sentinel_core::pipeline::{
    electricity_eval, imputation_ab, inject_anomalies, replay_high_ids, run_window, synth, ElectricityEvalConfig,
    InjectionSpec, ReportStore, TruthLabel, WindowConfig, WindowOutcome,
};
use sentinel_core::series::{MetricPoint, RegularSeries, SeriesKey};

fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2022, 5, 20, 0, 0, 0).unwrap()
}

fn points(s: &RegularSeries) -> Vec<MetricPoint> {
    s.values()
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| MetricPoint::new(s.timestamp_at(i), v).unwrap()))
        .collect()
}

struct GaussianSetup {
    source: BTreeMap<SeriesKey, Vec<MetricPoint>>,
    truth: BTreeSet<TruthLabel>,
    model: ConvForecaster,
    config: WindowConfig,
    window_start: DateTime<Utc>,
}

/// 100 N(50, 2²) series of 288 five-minute steps; five 10σ spikes in the last hour.
fn gaussian_setup() -> GaussianSetup {
    let (len, horizon) = (288, 12);
    let interval = Duration::minutes(5);
    let series = synth::gaussian_series(100, len, 50.0, 2.0, t0(), interval, 21);
    let mut source = BTreeMap::new();
    let mut truth = BTreeSet::new();
    for (i, s) in series.iter().enumerate() {
        let spec = InjectionSpec {
            count: usize::from(i % 20 == 3),
            seed: i as u64,
            region: Some((len - horizon, len)),
            ..InjectionSpec::default()
        };
        let (modified, labels) = inject_anomalies(s, &spec).unwrap();
        truth.extend(labels);
        source.insert(s.key().clone(), points(&modified));
    }
    let train = TrainConfig {
        context_length: 64,
        horizon,
        epochs: 30,
        channels: 4,
        dilations: vec![1, 2, 4, 8],
        batch_size: 8,
        origins_per_crop: 32,
        season_length: 12,
        ..TrainConfig::default()
    };
    let mut model = ConvForecaster::new(train.clone()).unwrap();
    let train_set: Vec<RegularSeries> = series.iter().take(10).map(|s| s.slice(0, len - horizon)).collect();
    model.fit(&train_set, &train).unwrap();
    let config = WindowConfig {
        horizon,
        interval_seconds: 300,
        ..WindowConfig::default()
    };
    GaussianSetup {
        source,
        truth,
        model,
        config,
        window_start: t0() + interval * (len - horizon) as i32,
    }
}

fn labels_of(outcome: &WindowOutcome, tier: Option<Tier>) -> BTreeSet<TruthLabel> {
    outcome
        .records
        .iter()
        .filter(|r| tier.is_none_or(|t| r.tier == t))
        .map(|r| TruthLabel {
            key: r.candidate.key.clone(),
            timestamp: r.candidate.timestamp,
        })
        .collect()
}

#[test]
fn injected_spikes_reach_the_high_tier() {
    let g = gaussian_setup();
    assert_eq!(g.truth.len(), 5);
    let out = run_window(&g.source, &g.model, &g.config, g.window_start).unwrap();
    assert_eq!(out.report.points_total, 1200);
    assert!(out.report.stage1_count >= 5);
    assert!(g.truth.is_subset(&labels_of(&out, Some(Tier::High))));
    assert!(out.report.evt_sample_size >= 1500);
}

#[test]
fn identical_inputs_give_identical_reports() {
    let g = gaussian_setup();
    let run = || {
        let mut out = run_window(&g.source, &g.model, &g.config, g.window_start).unwrap();
        out.report.wall_time_ms = 0;
        (
            serde_json::to_vec(&out.report).unwrap(),
            serde_json::to_vec(&out.records).unwrap(),
        )
    };
    assert_eq!(run(), run());
}

#[test]
fn store_backed_source_matches_memory_source() {
    let g = gaussian_setup();
    let dir = tempfile::tempdir().unwrap();
    let store = SeriesStore::open(dir.path()).unwrap();
    for (key, pts) in &g.source {
        store.append(key, pts).unwrap();
    }
    let mut a = run_window(&g.source, &g.model, &g.config, g.window_start).unwrap();
    let mut b = run_window(&store, &g.model, &g.config, g.window_start).unwrap();
    a.report.wall_time_ms = 0;
    b.report.wall_time_ms = 0;
    assert_eq!(a, b);
}

#[test]
fn persisted_funnel_is_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let config = ElectricityEvalConfig {
        seed: 3,
        report_dir: Some(dir.path().to_path_buf()),
        ..ElectricityEvalConfig::default()
    };
    electricity_eval(&config).unwrap();
    let store = ReportStore::open(dir.path()).unwrap();
    let windows = store.windows().unwrap();
    assert_eq!(windows.len(), 1);
    let report = store.report(windows[0]).unwrap().unwrap();
    let records = store.records(windows[0]).unwrap();
    assert_eq!(report.high_count + report.low_count, report.stage1_count);
    assert!(report.stage1_count <= report.points_total);
    assert_eq!(records.len(), report.stage1_count);

    let mut by_series: BTreeMap<&SeriesKey, (f64, f64)> = BTreeMap::new();
    for r in &records {
        let c = &r.candidate;
        assert!(c.abs_standardized_residual > report.band_z);
        let outside = c.actual > c.mu + r.band_z * c.sigma || c.actual < c.mu - r.band_z * c.sigma;
        assert!(outside, "record {} is inside the band", r.id);
        assert_eq!(r.tier == Tier::High, r.score() > r.z_q_at_detection);
        let entry = by_series.entry(&c.key).or_insert((f64::INFINITY, f64::NEG_INFINITY));
        match r.tier {
            Tier::High => entry.0 = entry.0.min(c.confidence),
            Tier::Low => entry.1 = entry.1.max(c.confidence),
        }
    }
    for (key, (min_high, max_low)) in by_series {
        assert!(min_high >= max_low, "{key}: {min_high} < {max_low}");
    }
}

#[test]
fn stricter_replay_is_a_subset() {
    let g = gaussian_setup();
    let out = run_window(&g.source, &g.model, &g.config, g.window_start).unwrap();
    let mut previous: Option<BTreeSet<String>> = None;
    for q in [0.05, 0.01, 0.002, 1e-4, 1e-6] {
        let ids: BTreeSet<String> = replay_high_ids(&out.report, &out.records, q).into_iter().collect();
        if let Some(prev) = &previous {
            assert!(ids.is_subset(prev));
        }
        previous = Some(ids);
    }
    let at_config: BTreeSet<String> = replay_high_ids(&out.report, &out.records, g.config.evt.risk_q)
        .into_iter()
        .collect();
    let committed: BTreeSet<String> = out.records.iter().filter(|r| r.tier == Tier::High).map(|r| r.id.clone()).collect();
    assert_eq!(at_config, committed);
}

#[test]
fn median_imputation_forecasts_better_than_zero() {
    for seed in 0..3 {
        let r = imputation_ab(50, 0.2, seed).unwrap();
        assert!(r.smape_median <= r.smape_zero, "{r:?}");
    }
}

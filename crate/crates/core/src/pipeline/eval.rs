//! Evaluation against injected ground truth, quantile sweeps, and the
//! desk-scale benchmark runs.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::time::Instant;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{run_window, synth, FunnelReport, PipelineError, ReportStore, WindowConfig, WindowOutcome};
use crate::evt::{pot_threshold, EvtConfig, Tier};
use crate::forecast::{ConvForecaster, ForecastModel, Model, SeasonalNaive, TrainConfig};
use crate::ingest::{load_electricity, parse_electricity};
use crate::series::{impute, ImputationPolicy, MetricPoint, RegularSeries, SeriesKey};
use crate::stage1::BandConfig;

/// One ground-truth (or detected) point.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TruthLabel {
    pub key: SeriesKey,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionSign {
    #[default]
    Up,
    Down,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InjectionSpec {
    pub count: usize,
    /// Spike height in multiples of the local sigma.
    pub magnitude: f64,
    pub width: usize,
    pub sign: InjectionSign,
    pub seed: u64,
    /// Trailing window for the local sigma.
    pub sigma_window: usize,
    /// Lower bound on the local sigma; `1e-3 · scale` when unset.
    pub sigma_floor: Option<f64>,
    /// Restrict spike positions to slots `[from, to)`.
    pub region: Option<(usize, usize)>,
}

impl Default for InjectionSpec {
    fn default() -> Self {
        Self {
            count: 0,
            magnitude: 10.0,
            width: 1,
            sign: InjectionSign::Up,
            seed: 0,
            sigma_window: 96,
            sigma_floor: None,
            region: None,
        }
    }
}

fn population_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Add `count` spikes of `sign · magnitude · σ_local` to a gap-free series.
/// `σ_local` is the standard deviation of the `sigma_window` values before
/// the spike, floored. Returns the modified series and every spiked step.
pub fn inject_anomalies(
    series: &RegularSeries,
    spec: &InjectionSpec,
) -> Result<(RegularSeries, Vec<TruthLabel>), PipelineError> {
    let values = series
        .dense()
        .ok_or_else(|| PipelineError::Invalid(format!("{} has gaps", series.key())))?;
    if spec.count == 0 {
        return Ok((series.clone(), Vec::new()));
    }
    let width = spec.width.max(1);
    if spec.count * width * 10 >= values.len() {
        return Err(PipelineError::SpecTooDense(format!(
            "{} spikes of width {width} in {} steps",
            spec.count,
            values.len()
        )));
    }
    let (from, to) = spec.region.unwrap_or((0, values.len()));
    let to = to.min(values.len());
    if from + width > to {
        return Err(PipelineError::SpecTooDense(format!("region [{from}, {to}) narrower than width {width}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut starts: Vec<usize> = (from..=to - width).collect();
    starts.shuffle(&mut rng);
    let mut chosen: Vec<usize> = Vec::with_capacity(spec.count);
    for s in starts {
        if chosen.iter().all(|c| s.abs_diff(*c) > width) {
            chosen.push(s);
            if chosen.len() == spec.count {
                break;
            }
        }
    }
    if chosen.len() < spec.count {
        return Err(PipelineError::SpecTooDense(format!(
            "only {} non-overlapping positions in region [{from}, {to})",
            chosen.len()
        )));
    }
    chosen.sort_unstable();

    let floor = spec.sigma_floor.unwrap_or(1e-3 * series.scale());
    let mut out = values.clone();
    let mut labels = Vec::new();
    for &pos in &chosen {
        let sigma = population_std(&values[pos.saturating_sub(spec.sigma_window)..pos]).max(floor);
        let sign = match spec.sign {
            InjectionSign::Up => 1.0,
            InjectionSign::Down => -1.0,
            InjectionSign::Both => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
        };
        for slot in pos..pos + width {
            out[slot] += sign * spec.magnitude * sigma;
            labels.push(TruthLabel {
                key: series.key().clone(),
                timestamp: series.timestamp_at(slot),
            });
        }
    }
    let modified = RegularSeries::from_values(series.key().clone(), series.start(), series.interval(), &out)?;
    Ok((modified, labels))
}

/// Point-level precision and recall. Both are 1 on empty inputs by convention.
pub fn precision_recall(detected: &BTreeSet<TruthLabel>, truth: &BTreeSet<TruthLabel>) -> (f64, f64) {
    let hits = detected.intersection(truth).count() as f64;
    let precision = if detected.is_empty() {
        1.0
    } else {
        hits / detected.len() as f64
    };
    let recall = if truth.is_empty() { 1.0 } else { hits / truth.len() as f64 };
    (precision, recall)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub precision: f64,
    pub recall: f64,
    pub anomaly_percent: f64,
    pub smape: f64,
    pub detected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub quantile: f64,
    pub high_count: usize,
    pub anomaly_percent: f64,
    pub z_q: f64,
}

/// Tail threshold and exceedance count of `scores` at each quantile of
/// `grid` (risk factor `1 - quantile`). The grid must be ascending.
pub fn quantile_sweep(scores: &[f64], evt: &EvtConfig, grid: &[f64]) -> Result<Vec<SweepRow>, PipelineError> {
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(PipelineError::Invalid("quantile grid must be ascending".into()));
    }
    grid.iter()
        .map(|&quantile| {
            let fit = pot_threshold(scores, &evt.with_risk_q(1.0 - quantile))?;
            let high_count = scores.iter().filter(|s| **s > fit.z_q).count();
            Ok(SweepRow {
                quantile,
                high_count,
                anomaly_percent: 100.0 * high_count as f64 / scores.len() as f64,
                z_q: fit.z_q,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    SeasonalNaive,
    Conv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ElectricityEvalConfig {
    pub customers: usize,
    pub context_hours: usize,
    pub detection_hours: usize,
    /// Held-out hours between training and detection, used for backtests.
    pub calibration_hours: usize,
    pub train_hours: usize,
    /// Pooled tail sample size to reach with backtests over the calibration hours.
    pub evt_sample: usize,
    pub injection: InjectionSpec,
    pub seed: u64,
    pub model: ModelKind,
    pub epochs: usize,
    /// Real UCI file; a synthetic file in the same layout is used otherwise.
    pub data: Option<PathBuf>,
    pub band: BandConfig,
    pub evt: EvtConfig,
    /// Commit the detection window here when set.
    pub report_dir: Option<PathBuf>,
}

impl Default for ElectricityEvalConfig {
    fn default() -> Self {
        Self {
            customers: 20,
            context_hours: 168,
            detection_hours: 24,
            calibration_hours: 384,
            train_hours: 336,
            evt_sample: 8000,
            injection: InjectionSpec {
                count: 10,
                ..InjectionSpec::default()
            },
            seed: 7,
            model: ModelKind::SeasonalNaive,
            epochs: 30,
            data: None,
            band: BandConfig::default(),
            evt: EvtConfig::default(),
            report_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub model: String,
    pub series: usize,
    pub points_total: usize,
    pub injected: usize,
    /// High tier of the tail filter.
    pub evt: EvalResult,
    /// All band-filter candidates.
    pub stage1: EvalResult,
    pub funnel: FunnelReport,
    pub runtime_ms: u64,
}

/// Everything an evaluation run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRun {
    pub report: EvalReport,
    pub outcome: WindowOutcome,
    pub truth: Vec<TruthLabel>,
}

fn to_points(series: &RegularSeries) -> Vec<MetricPoint> {
    series
        .values()
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| MetricPoint::new(series.timestamp_at(i), v).expect("finite")))
        .collect()
}

fn tier_result(
    outcome: &WindowOutcome,
    truth: &BTreeSet<TruthLabel>,
    only_high: bool,
) -> EvalResult {
    let detected: BTreeSet<TruthLabel> = outcome
        .records
        .iter()
        .filter(|r| !only_high || r.tier == Tier::High)
        .map(|r| TruthLabel {
            key: r.candidate.key.clone(),
            timestamp: r.candidate.timestamp,
        })
        .collect();
    let (precision, recall) = precision_recall(&detected, truth);
    let report = &outcome.report;
    EvalResult {
        precision,
        recall,
        anomaly_percent: 100.0 * detected.len() as f64 / report.points_total.max(1) as f64,
        smape: if only_high {
            report.smape_on_anomalies
        } else {
            report.smape_stage1
        },
        detected: detected.len(),
    }
}

/// An untrained model of `kind`.
pub fn build_model(kind: ModelKind, train: TrainConfig) -> Result<Model, PipelineError> {
    Ok(match kind {
        ModelKind::SeasonalNaive => Model::SeasonalNaive(SeasonalNaive::new(train.season_length)),
        ModelKind::Conv => Model::Conv(ConvForecaster::new(train)?),
    })
}

/// Desk-scale electricity run: train on the first `train_hours`, inject
/// spikes into the last `detection_hours`, run the funnel over that window
/// and score both tiers against the injected labels.
pub fn electricity_eval(config: &ElectricityEvalConfig) -> Result<EvalRun, PipelineError> {
    let started = Instant::now();
    let total = config.train_hours + config.calibration_hours + config.detection_hours;
    if config.train_hours < config.context_hours || config.detection_hours == 0 {
        return Err(PipelineError::Invalid("train_hours must cover the context and detection must be non-empty".into()));
    }
    let mut series = match &config.data {
        Some(path) => load_electricity(path, total)?,
        None => {
            let start = Utc.with_ymd_and_hms(2014, 1, 1, 0, 0, 0).unwrap();
            parse_electricity(&synth::electricity_file(config.customers, total, start, config.seed), total)?
        }
    };
    series.truncate(config.customers);
    let series: Vec<RegularSeries> = series
        .iter()
        .map(|s| impute(s, ImputationPolicy::Median))
        .collect::<Result<_, _>>()?;

    let detection_from = total - config.detection_hours;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x1_0000);
    let mut per_series = vec![0usize; series.len()];
    for _ in 0..config.injection.count {
        per_series[rng.random_range(0..series.len())] += 1;
    }
    let mut source: BTreeMap<SeriesKey, Vec<MetricPoint>> = BTreeMap::new();
    let mut truth = BTreeSet::new();
    for (i, (s, count)) in series.iter().zip(per_series).enumerate() {
        let spec = InjectionSpec {
            count,
            seed: config.seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
            region: Some((detection_from, total)),
            ..config.injection.clone()
        };
        let (modified, labels) = inject_anomalies(s, &spec)?;
        truth.extend(labels);
        source.insert(s.key().clone(), to_points(&modified));
    }

    let train = TrainConfig {
        context_length: config.context_hours,
        horizon: config.detection_hours,
        season_length: 24,
        epochs: config.epochs,
        seed: config.seed,
        ..TrainConfig::default()
    };
    let mut model = build_model(config.model, train.clone())?;
    let train_set: Vec<RegularSeries> = series.iter().map(|s| s.slice(0, config.train_hours)).collect();
    model.fit(&train_set, &train)?;

    let window = WindowConfig {
        band: config.band.clone(),
        evt: config.evt.clone(),
        interval_seconds: 3600,
        horizon: config.detection_hours,
        imputation: ImputationPolicy::Median,
        min_evt_sample: config.evt_sample,
        max_calibration_windows: config.calibration_hours / config.detection_hours,
        per_series_evt: true,
        metric_name: None,
    };
    let window_start = series[0].timestamp_at(detection_from);
    let outcome = run_window(&source, &model, &window, window_start)?;
    if let Some(dir) = &config.report_dir {
        ReportStore::open(dir)?.commit(&outcome)?;
    }
    let report = EvalReport {
        dataset: "electricity".into(),
        model: model.name().into(),
        series: series.len(),
        points_total: outcome.report.points_total,
        injected: truth.len(),
        evt: tier_result(&outcome, &truth, true),
        stage1: tier_result(&outcome, &truth, false),
        funnel: outcome.report.clone(),
        runtime_ms: started.elapsed().as_millis() as u64,
    };
    Ok(EvalRun {
        report,
        outcome,
        truth: truth.into_iter().collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationAbResult {
    pub seed: u64,
    pub smape_median: f64,
    pub smape_zero: f64,
}

/// Run the funnel over gapped sinusoids once with median and once with zero
/// imputation and report the forecast SMAPE of each.
pub fn imputation_ab(series_count: usize, gap_fraction: f64, seed: u64) -> Result<ImputationAbResult, PipelineError> {
    let period = 48;
    let horizon = 12;
    let context = 4 * period;
    let len = context + horizon * 24;
    let start = Utc.with_ymd_and_hms(2022, 5, 1, 0, 0, 0).unwrap();
    let interval = Duration::minutes(5);
    let series = synth::gapped_sinusoids(series_count, len, period, gap_fraction, start, interval, seed);
    let source: BTreeMap<SeriesKey, Vec<MetricPoint>> =
        series.iter().map(|s| (s.key().clone(), to_points(s))).collect();
    let train = TrainConfig {
        context_length: context,
        horizon,
        season_length: period,
        ..TrainConfig::default()
    };
    let window_start = start + interval * (len - horizon) as i32;

    let smape_for = |policy: ImputationPolicy| -> Result<f64, PipelineError> {
        let train_set: Vec<RegularSeries> = series
            .iter()
            .map(|s| impute(&s.slice(0, len - horizon), policy))
            .collect::<Result<_, _>>()?;
        let mut model = SeasonalNaive::new(period);
        model.fit(&train_set, &train)?;
        let config = WindowConfig {
            interval_seconds: interval.num_seconds(),
            horizon,
            imputation: policy,
            ..WindowConfig::default()
        };
        Ok(run_window(&source, &model, &config, window_start)?.report.smape_all)
    };
    Ok(ImputationAbResult {
        seed,
        smape_median: smape_for(ImputationPolicy::Median)?,
        smape_zero: smape_for(ImputationPolicy::Zero)?,
    })
}

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{FunnelReport, PipelineError, WindowOutcome};
use crate::evt::Tier;
use crate::fsutil::write_atomic;
use crate::series::SeriesKey;
use crate::stage1::AnomalyCandidate;

const WINDOW_FORMAT: &str = "%Y%m%dT%H%M%SZ";
const VERDICT_LOG: &str = "verdicts.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    #[default]
    Unreviewed,
    Confirmed,
    FalseFlag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyRecord {
    pub id: String,
    pub window_start: DateTime<Utc>,
    #[serde(flatten)]
    pub candidate: AnomalyCandidate,
    pub tier: Tier,
    pub z_q_at_detection: f64,
    pub band_z: f64,
    #[serde(default)]
    pub verdict: Verdict,
    #[serde(default)]
    pub verdict_time: Option<DateTime<Utc>>,
}

/// Content hash of (key, timestamp, window): identical re-runs give identical ids.
pub fn record_id(key: &SeriesKey, timestamp: DateTime<Utc>, window_start: DateTime<Utc>) -> String {
    let mut h = Sha256::new();
    h.update(key.digest().as_bytes());
    h.update(b"|");
    h.update(timestamp.to_rfc3339().as_bytes());
    h.update(b"|");
    h.update(window_start.to_rfc3339().as_bytes());
    hex::encode(&h.finalize()[..16])
}

pub fn window_id(start: DateTime<Utc>) -> String {
    start.format(WINDOW_FORMAT).to_string()
}

fn parse_window_id(id: &str) -> Option<DateTime<Utc>> {
    NaiveDateTime::parse_from_str(id, WINDOW_FORMAT).ok().map(|t| t.and_utc())
}

impl AnomalyRecord {
    pub fn new(candidate: AnomalyCandidate, tier: Tier, z_q: f64, band_z: f64, window_start: DateTime<Utc>) -> Self {
        Self {
            id: record_id(&candidate.key, candidate.timestamp, window_start),
            window_start,
            candidate,
            tier,
            z_q_at_detection: z_q,
            band_z,
            verdict: Verdict::Unreviewed,
            verdict_time: None,
        }
    }

    pub fn score(&self) -> f64 {
        self.candidate.abs_standardized_residual
    }

    /// Apply a review verdict. Returns whether anything changed; repeating the
    /// current verdict is a no-op, switching between verdicts is a conflict.
    pub fn apply_verdict(&mut self, verdict: Verdict, now: DateTime<Utc>) -> Result<bool, PipelineError> {
        match (self.verdict, verdict) {
            (_, Verdict::Unreviewed) => Err(PipelineError::Invalid("verdict must be confirmed or false_flag".into())),
            (current, new) if current == new => Ok(false),
            (Verdict::Unreviewed, new) => {
                self.verdict = new;
                self.verdict_time = Some(now);
                Ok(true)
            }
            (current, _) => Err(PipelineError::VerdictConflict {
                id: self.id.clone(),
                current,
            }),
        }
    }
}

/// Forecast band of one series over a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesBand {
    pub key: SeriesKey,
    pub start: DateTime<Utc>,
    pub interval_seconds: i64,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictEntry {
    pub id: String,
    pub verdict: Verdict,
    pub verdict_time: DateTime<Utc>,
}

/// Committed window reports on disk.
///
/// A window is committed once its `funnel-<window>.json` exists; it is written
/// last, after the anomaly and band files, so a crash mid-commit leaves only
/// orphans that [`ReportStore::open`] removes.
#[derive(Debug, Clone)]
pub struct ReportStore {
    root: PathBuf,
}

fn to_jsonl<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).expect("records serialize");
        out.push(b'\n');
    }
    out
}

fn corrupt(path: &Path, message: impl ToString) -> PipelineError {
    PipelineError::Corrupt {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| corrupt(path, e)))
        .collect()
}

impl ReportStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        let store = Self { root };
        store.remove_orphans()?;
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, kind: &str, start: DateTime<Utc>, ext: &str) -> PathBuf {
        self.root.join(format!("{kind}-{}.{ext}", window_id(start)))
    }

    fn funnel_path(&self, start: DateTime<Utc>) -> PathBuf {
        self.path("funnel", start, "json")
    }

    fn remove_orphans(&self) -> Result<(), PipelineError> {
        for entry in fs::read_dir(&self.root)? {
            let path = entry?.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
                continue;
            };
            if name.ends_with(".tmp") {
                fs::remove_file(&path)?;
                continue;
            }
            let window = ["anomalies-", "bands-"]
                .iter()
                .find_map(|p| name.strip_prefix(p))
                .and_then(|rest| rest.split('.').next())
                .and_then(parse_window_id);
            if let Some(start) = window {
                if !self.funnel_path(start).exists() {
                    fs::remove_file(&path)?;
                }
            }
        }
        Ok(())
    }

    pub fn is_committed(&self, start: DateTime<Utc>) -> bool {
        self.funnel_path(start).exists()
    }

    pub fn commit(&self, outcome: &WindowOutcome) -> Result<(), PipelineError> {
        self.commit_with(outcome, || {})
    }

    /// Like [`ReportStore::commit`], calling `before_marker` after the data
    /// files are durable and before the commit marker is written.
    pub fn commit_with(&self, outcome: &WindowOutcome, before_marker: impl FnOnce()) -> Result<(), PipelineError> {
        let start = outcome.report.window_start;
        if self.is_committed(start) {
            return Err(PipelineError::AlreadyCommitted(window_id(start)));
        }
        write_atomic(&self.path("anomalies", start, "jsonl"), &to_jsonl(&outcome.records))?;
        write_atomic(&self.path("bands", start, "jsonl"), &to_jsonl(&outcome.bands))?;
        before_marker();
        let funnel = serde_json::to_vec_pretty(&outcome.report).expect("report serializes");
        write_atomic(&self.funnel_path(start), &funnel)?;
        Ok(())
    }

    /// Committed window starts, ascending.
    pub fn windows(&self) -> Result<Vec<DateTime<Utc>>, PipelineError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let name = entry?.file_name();
            let Some(name) = name.to_str() else { continue };
            if let Some(start) = name
                .strip_prefix("funnel-")
                .and_then(|r| r.strip_suffix(".json"))
                .and_then(parse_window_id)
            {
                out.push(start);
            }
        }
        out.sort();
        Ok(out)
    }

    pub fn report(&self, start: DateTime<Utc>) -> Result<Option<FunnelReport>, PipelineError> {
        let path = self.funnel_path(start);
        if !path.exists() {
            return Ok(None);
        }
        let bytes = fs::read(&path)?;
        serde_json::from_slice(&bytes).map(Some).map_err(|e| corrupt(&path, e))
    }

    /// Records as detected, without verdicts applied.
    pub fn records(&self, start: DateTime<Utc>) -> Result<Vec<AnomalyRecord>, PipelineError> {
        if !self.is_committed(start) {
            return Ok(Vec::new());
        }
        read_jsonl(&self.path("anomalies", start, "jsonl"))
    }

    pub fn bands(&self, start: DateTime<Utc>) -> Result<Vec<SeriesBand>, PipelineError> {
        if !self.is_committed(start) {
            return Ok(Vec::new());
        }
        read_jsonl(&self.path("bands", start, "jsonl"))
    }

    /// Verdict log; a torn final line from an interrupted append is ignored.
    pub fn verdicts(&self) -> Result<BTreeMap<String, VerdictEntry>, PipelineError> {
        let path = self.root.join(VERDICT_LOG);
        let mut out = BTreeMap::new();
        let Ok(file) = fs::File::open(&path) else {
            return Ok(out);
        };
        for line in BufReader::new(file).lines() {
            let line = line?;
            if let Ok(entry) = serde_json::from_str::<VerdictEntry>(&line) {
                out.entry(entry.id.clone()).or_insert(entry);
            }
        }
        Ok(out)
    }

    /// Durably append a verdict; returns after the data is synced.
    pub fn append_verdict(&self, entry: &VerdictEntry) -> Result<(), PipelineError> {
        let path = self.root.join(VERDICT_LOG);
        let mut file = OpenOptions::new().create(true).read(true).append(true).open(&path)?;
        let mut line = Vec::new();
        if ends_mid_line(&mut file)? {
            line.push(b'\n');
        }
        serde_json::to_writer(&mut line, entry).expect("verdict serializes");
        line.push(b'\n');
        file.write_all(&line)?;
        file.sync_data()?;
        Ok(())
    }
}

fn ends_mid_line(file: &mut fs::File) -> std::io::Result<bool> {
    let len = file.metadata()?.len();
    if len == 0 {
        return Ok(false);
    }
    let mut last = [0u8];
    file.seek(SeekFrom::Start(len - 1))?;
    file.read_exact(&mut last)?;
    Ok(last[0] != b'\n')
}

//! Append-only per-key series store.
//!
//! Layout: `<root>/<digest(key)>/key.json`, `<root>/<digest(key)>/segment-<n>.jsonl`
//! (one JSON point per line) and `<root>/index.json`. The index is a cache: it
//! is rebuilt from the segments on open, and a torn trailing line left by a
//! crash is truncated away.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::fsutil::write_atomic;
use crate::series::{MetricPoint, SeriesKey};

const SEGMENT_POINTS: usize = 10_000;
const INDEX_FILE: &str = "index.json";
const KEY_FILE: &str = "key.json";

/// Read access to keyed raw points.
pub trait SeriesSource: Send + Sync {
    fn keys(&self) -> Vec<SeriesKey>;

    /// Points of `key` with `from <= timestamp < to`, in timestamp order.
    fn points_in(
        &self,
        key: &SeriesKey,
        from: DateTime<Utc>,
        to: DateTime<Utc>,
    ) -> Result<Vec<MetricPoint>, IngestError>;
}

impl SeriesSource for BTreeMap<SeriesKey, Vec<MetricPoint>> {
    fn keys(&self) -> Vec<SeriesKey> {
        self.keys().cloned().collect()
    }

    fn points_in(
        &self,
        key: &SeriesKey,
        from: DateTime<Utc>,
        to: DateTime<Utc>,
    ) -> Result<Vec<MetricPoint>, IngestError> {
        Ok(self
            .get(key)
            .map(|pts| {
                pts.iter()
                    .filter(|p| p.timestamp >= from && p.timestamp < to)
                    .copied()
                    .collect()
            })
            .unwrap_or_default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SegmentInfo {
    name: String,
    points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct KeyEntry {
    key: SeriesKey,
    segments: Vec<SegmentInfo>,
    last_timestamp: Option<DateTime<Utc>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexFile {
    version: u32,
    keys: BTreeMap<String, KeyEntry>,
}

#[derive(Debug)]
pub struct SeriesStore {
    root: PathBuf,
    index: RwLock<BTreeMap<String, KeyEntry>>,
}

fn segment_name(n: usize) -> String {
    format!("segment-{n:06}.jsonl")
}

impl SeriesStore {
    /// Open (or create) a store, rebuilding the index from the segment files.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, IngestError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        let store = Self {
            root,
            index: RwLock::new(BTreeMap::new()),
        };
        store.rebuild_index()?;
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Scan every key directory, truncate torn tails and rewrite `index.json`.
    pub fn rebuild_index(&self) -> Result<(), IngestError> {
        let mut rebuilt = BTreeMap::new();
        for entry in fs::read_dir(&self.root)? {
            let entry = entry?;
            if !entry.file_type()?.is_dir() {
                continue;
            }
            let dir = entry.path();
            let key_path = dir.join(KEY_FILE);
            if !key_path.exists() {
                // crashed between mkdir and key.json; nothing was committed
                fs::remove_dir_all(&dir)?;
                continue;
            }
            let key: SeriesKey = serde_json::from_slice(&fs::read(&key_path)?).map_err(|e| IngestError::Corrupt {
                path: key_path.display().to_string(),
                message: e.to_string(),
            })?;
            let mut names: Vec<String> = fs::read_dir(&dir)?
                .filter_map(|e| e.ok())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .filter(|n| n.starts_with("segment-") && n.ends_with(".jsonl"))
                .collect();
            names.sort();
            let mut segments = Vec::new();
            let mut last_timestamp = None;
            for name in names {
                let path = dir.join(&name);
                let points = recover_segment(&path)?;
                if let Some(p) = points.last() {
                    last_timestamp = Some(p.timestamp);
                }
                segments.push(SegmentInfo {
                    name,
                    points: points.len(),
                });
            }
            rebuilt.insert(
                key.digest(),
                KeyEntry {
                    key,
                    segments,
                    last_timestamp,
                },
            );
        }
        let mut index = self.index.write();
        *index = rebuilt;
        self.persist_index(&index)
    }

    fn persist_index(&self, index: &BTreeMap<String, KeyEntry>) -> Result<(), IngestError> {
        let file = IndexFile {
            version: 1,
            keys: index.clone(),
        };
        write_atomic(&self.root.join(INDEX_FILE), &serde_json::to_vec_pretty(&file).expect("index serializes"))?;
        Ok(())
    }

    /// Append points that are strictly after the key's last committed timestamp.
    pub fn append(&self, key: &SeriesKey, points: &[MetricPoint]) -> Result<usize, IngestError> {
        if points.is_empty() {
            return Ok(0);
        }
        let mut index = self.index.write();
        let digest = key.digest();
        let last = index.get(&digest).and_then(|e| e.last_timestamp);
        let mut previous = last;
        for p in points {
            if let Some(prev) = previous {
                if p.timestamp <= prev {
                    return Err(IngestError::OutOfOrder {
                        timestamp: p.timestamp,
                        last_committed: prev,
                    });
                }
            }
            previous = Some(p.timestamp);
        }

        let dir = self.root.join(&digest);
        if !index.contains_key(&digest) {
            fs::create_dir_all(&dir)?;
            write_atomic(&dir.join(KEY_FILE), &serde_json::to_vec(key).expect("key serializes"))?;
            index.insert(
                digest.clone(),
                KeyEntry {
                    key: key.clone(),
                    segments: Vec::new(),
                    last_timestamp: None,
                },
            );
        }
        let entry = index.get_mut(&digest).expect("entry inserted above");
        let mut remaining = points;
        while !remaining.is_empty() {
            let need_new = entry.segments.last().is_none_or(|s| s.points >= SEGMENT_POINTS);
            if need_new {
                entry.segments.push(SegmentInfo {
                    name: segment_name(entry.segments.len()),
                    points: 0,
                });
            }
            let segment = entry.segments.last_mut().expect("segment exists");
            let take = remaining.len().min(SEGMENT_POINTS - segment.points);
            let mut buf = Vec::with_capacity(take * 48);
            for p in &remaining[..take] {
                serde_json::to_writer(&mut buf, p).expect("point serializes");
                buf.push(b'\n');
            }
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(dir.join(&segment.name))?;
            file.write_all(&buf)?;
            file.sync_data()?;
            segment.points += take;
            remaining = &remaining[take..];
        }
        entry.last_timestamp = points.last().map(|p| p.timestamp);
        self.persist_index(&index)?;
        Ok(points.len())
    }

    pub fn last_timestamp(&self, key: &SeriesKey) -> Option<DateTime<Utc>> {
        self.index.read().get(&key.digest()).and_then(|e| e.last_timestamp)
    }

    pub fn point_count(&self, key: &SeriesKey) -> usize {
        self.index
            .read()
            .get(&key.digest())
            .map_or(0, |e| e.segments.iter().map(|s| s.points).sum())
    }

    /// All committed points of `key`.
    pub fn read(&self, key: &SeriesKey) -> Result<Vec<MetricPoint>, IngestError> {
        let index = self.index.read();
        let Some(entry) = index.get(&key.digest()) else {
            return Ok(Vec::new());
        };
        let dir = self.root.join(key.digest());
        let mut out = Vec::new();
        for seg in &entry.segments {
            let path = dir.join(&seg.name);
            let text = fs::read_to_string(&path)?;
            for line in text.lines().take(seg.points) {
                out.push(parse_line(line, &path)?);
            }
        }
        Ok(out)
    }
}

impl SeriesSource for SeriesStore {
    fn keys(&self) -> Vec<SeriesKey> {
        self.index.read().values().map(|e| e.key.clone()).collect()
    }

    fn points_in(
        &self,
        key: &SeriesKey,
        from: DateTime<Utc>,
        to: DateTime<Utc>,
    ) -> Result<Vec<MetricPoint>, IngestError> {
        Ok(self
            .read(key)?
            .into_iter()
            .filter(|p| p.timestamp >= from && p.timestamp < to)
            .collect())
    }
}

fn parse_line(line: &str, path: &Path) -> Result<MetricPoint, IngestError> {
    serde_json::from_str(line).map_err(|e| IngestError::Corrupt {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Parse a segment, truncating any bytes after the last newline.
fn recover_segment(path: &Path) -> Result<Vec<MetricPoint>, IngestError> {
    let bytes = fs::read(path)?;
    let committed = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
    if committed < bytes.len() {
        let file = OpenOptions::new().write(true).open(path)?;
        file.set_len(committed as u64)?;
        file.sync_all()?;
    }
    let text = std::str::from_utf8(&bytes[..committed]).map_err(|e| IngestError::Corrupt {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    text.lines().map(|l| parse_line(l, path)).collect()
}

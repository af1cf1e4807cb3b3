//! Parsing of metric envelopes and benchmark files, plus the append-only
//! series store.

mod electricity;
mod envelope;
mod store;

pub use electricity::{load_electricity, load_single_column_csv, parse_electricity, ELECTRICITY_METRIC};
pub use envelope::{
    envelopes_from_series, parse_envelopes, parse_metric_json, DimensionSeries, MetricEnvelope, ParsedSeries, RawPoint,
    ENVELOPE_SCHEMA_VERSION,
};
pub use store::{SeriesSource, SeriesStore};

use chrono::{DateTime, Utc};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed JSON at byte {offset}: {message}")]
    MalformedJson { offset: usize, message: String },
    #[error("schema violation at {path}: {message}")]
    SchemaViolation { path: String, message: String },
    #[error("format error on line {line}: {message}")]
    FormatError { line: usize, message: String },
    #[error("file too short: {available} hourly rows, window needs {required}")]
    ShortFile { available: usize, required: usize },
    #[error("out-of-order point at {timestamp} (last committed {last_committed})")]
    OutOfOrder {
        timestamp: DateTime<Utc>,
        last_committed: DateTime<Utc>,
    },
    #[error("corrupt store file {path}: {message}")]
    Corrupt { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

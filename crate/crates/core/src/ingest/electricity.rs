//! Loader for the UCI "ElectricityLoadDiagrams20112014" text format.
//!
//! The file is `;`-separated with `,` as the decimal mark. The first column is
//! a timestamp labelling the *end* of a 15-minute interval; every further column
//! is one customer's kW reading. Readings are averaged into hourly slots, so
//! the readings labelled 00:15, 00:30, 00:45 and 01:00 form the 00:00 hour.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Duration, NaiveDateTime, Utc};

use super::IngestError;
use crate::series::{RegularSeries, SeriesKey};

pub const ELECTRICITY_METRIC: &str = "consumption_kW";

pub fn load_electricity(path: &Path, window_hours: usize) -> Result<Vec<RegularSeries>, IngestError> {
    let text = std::fs::read_to_string(path)?;
    parse_electricity(&text, window_hours)
}

fn format_error(line: usize, message: impl Into<String>) -> IngestError {
    IngestError::FormatError {
        line,
        message: message.into(),
    }
}

fn unquote(field: &str) -> &str {
    field.trim().trim_matches('"')
}

fn parse_reading(field: &str, line: usize) -> Result<f64, IngestError> {
    let field = unquote(field);
    if field.contains('.') {
        return Err(format_error(line, format!("{field:?} uses '.' as decimal mark, expected ','")));
    }
    field
        .replace(',', ".")
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| format_error(line, format!("{field:?} is not a number")))
}

/// Parse file contents into one hourly series per customer covering the last
/// `window_hours` hours of the file.
pub fn parse_electricity(text: &str, window_hours: usize) -> Result<Vec<RegularSeries>, IngestError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| format_error(1, "empty file"))?;
    if !header.contains(';') {
        return Err(format_error(1, "header is not ';'-separated"));
    }
    let customers: Vec<String> = header.split(';').skip(1).map(|c| unquote(c).to_string()).collect();
    if customers.is_empty() {
        return Err(format_error(1, "no customer columns"));
    }

    let quarter = Duration::minutes(15);
    // hour start -> per-customer (sum, count)
    let mut hours: BTreeMap<DateTime<Utc>, Vec<(f64, u32)>> = BTreeMap::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let mut fields = line.split(';');
        let stamp = unquote(fields.next().unwrap_or_default());
        let label = NaiveDateTime::parse_from_str(stamp, "%Y-%m-%d %H:%M:%S")
            .map_err(|e| format_error(line_no, format!("bad timestamp {stamp:?}: {e}")))?
            .and_utc();
        let readings: Vec<f64> = fields
            .map(|f| parse_reading(f, line_no))
            .collect::<Result<_, _>>()?;
        if readings.len() != customers.len() {
            return Err(format_error(
                line_no,
                format!("expected {} readings, found {}", customers.len(), readings.len()),
            ));
        }
        let begin = label - quarter;
        let hour = begin - Duration::seconds(begin.timestamp().rem_euclid(3600));
        let slot = hours
            .entry(hour)
            .or_insert_with(|| vec![(0.0, 0); customers.len()]);
        for (acc, r) in slot.iter_mut().zip(readings) {
            acc.0 += r;
            acc.1 += 1;
        }
    }

    let (Some(first), Some(last)) = (hours.keys().next().copied(), hours.keys().next_back().copied()) else {
        return Err(IngestError::ShortFile {
            available: 0,
            required: window_hours,
        });
    };
    let available = ((last - first).num_hours() + 1) as usize;
    if available < window_hours || window_hours == 0 {
        return Err(IngestError::ShortFile {
            available,
            required: window_hours.max(1),
        });
    }
    let start = last - Duration::hours(window_hours as i64 - 1);

    customers
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let values = (0..window_hours)
                .map(|h| {
                    hours
                        .get(&(start + Duration::hours(h as i64)))
                        .and_then(|slot| (slot[c].1 > 0).then(|| slot[c].0 / slot[c].1 as f64))
                })
                .collect();
            let key = SeriesKey::new("UCI", "LD2011_2014", "", ELECTRICITY_METRIC, "customer", name.as_str())
                .expect("metric name is non-empty");
            Ok(RegularSeries::new(key, start, Duration::hours(1), values).expect("positive interval"))
        })
        .collect()
}

/// One numeric value per line (`.` decimal mark). A non-numeric first line is
/// taken as a header; empty or `NaN` entries become gaps.
pub fn load_single_column_csv(
    path: &Path,
    key: SeriesKey,
    start: DateTime<Utc>,
    interval: Duration,
) -> Result<RegularSeries, IngestError> {
    let text = std::fs::read_to_string(path)?;
    let mut values = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let field = line.trim().trim_matches('"');
        if field.is_empty() || field.eq_ignore_ascii_case("nan") {
            values.push(None);
            continue;
        }
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => values.push(Some(v)),
            _ if idx == 0 => continue,
            _ => return Err(format_error(idx + 1, format!("{field:?} is not a number"))),
        }
    }
    RegularSeries::new(key, start, interval, values).map_err(|e| format_error(0, e.to_string()))
}

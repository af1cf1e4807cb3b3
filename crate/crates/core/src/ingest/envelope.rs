use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::IngestError;
use crate::series::{MetricPoint, RegularSeries, SeriesKey};

pub const ENVELOPE_SCHEMA_VERSION: u32 = 1;

/// One metric of one resource, with a series per dimension value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEnvelope {
    pub schema_version: u32,
    pub resource_type: String,
    pub resource_id: String,
    pub region: String,
    pub metric_name: String,
    pub unit: String,
    pub timeseries: Vec<DimensionSeries>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionSeries {
    pub dimension: String,
    pub dimension_value: String,
    pub points: Vec<RawPoint>,
}

/// A point as it arrives on the wire; `None` is an explicit gap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawPoint {
    pub timestamp: DateTime<Utc>,
    pub value: Option<f64>,
}

/// One keyed series extracted from an envelope, points in timestamp order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParsedSeries {
    pub key: SeriesKey,
    pub unit: String,
    pub points: Vec<RawPoint>,
}

impl ParsedSeries {
    pub fn gap_count(&self) -> usize {
        self.points.iter().filter(|p| p.value.is_none()).count()
    }

    /// Observed points only.
    pub fn metric_points(&self) -> Vec<MetricPoint> {
        self.points
            .iter()
            .filter_map(|p| p.value.map(|v| MetricPoint { timestamp: p.timestamp, value: v }))
            .collect()
    }
}

impl MetricEnvelope {
    pub fn series_keys(&self) -> Result<Vec<SeriesKey>, IngestError> {
        self.timeseries
            .iter()
            .map(|ts| {
                SeriesKey::new(
                    &self.resource_type,
                    &self.resource_id,
                    &self.region,
                    &self.metric_name,
                    &ts.dimension,
                    &ts.dimension_value,
                )
                .map_err(|e| IngestError::SchemaViolation {
                    path: "metric_name".into(),
                    message: e.to_string(),
                })
            })
            .collect()
    }
}

/// Parse a document holding one envelope or a JSON array of envelopes.
pub fn parse_envelopes(document: &[u8]) -> Result<Vec<MetricEnvelope>, IngestError> {
    let value: Value = serde_json::from_slice(document).map_err(|e| IngestError::MalformedJson {
        offset: byte_offset(document, e.line(), e.column()),
        message: e.to_string(),
    })?;
    match value {
        Value::Array(items) => items
            .iter()
            .enumerate()
            .map(|(i, item)| envelope_from_value(item, &format!("$[{i}]")))
            .collect(),
        other => Ok(vec![envelope_from_value(&other, "$")?]),
    }
}

/// Flatten a document into one entry per (envelope, dimension value).
pub fn parse_metric_json(document: &[u8]) -> Result<Vec<ParsedSeries>, IngestError> {
    let mut out = Vec::new();
    for envelope in parse_envelopes(document)? {
        let keys = envelope.series_keys()?;
        for (key, ts) in keys.into_iter().zip(envelope.timeseries) {
            let mut points = ts.points;
            points.sort_by_key(|p| p.timestamp);
            out.push(ParsedSeries {
                key,
                unit: envelope.unit.clone(),
                points,
            });
        }
    }
    Ok(out)
}

/// Group regular series into envelopes, one per (resource, metric); gaps
/// become null points.
pub fn envelopes_from_series(series: &[RegularSeries], unit: &str) -> Vec<MetricEnvelope> {
    let mut groups: BTreeMap<(&str, &str, &str, &str), Vec<DimensionSeries>> = BTreeMap::new();
    for s in series {
        let k = s.key();
        let points = s
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| RawPoint {
                timestamp: s.timestamp_at(i),
                value: *v,
            })
            .collect();
        groups
            .entry((&k.provider_id, &k.provider_id2, &k.resource_region, &k.metric_name))
            .or_default()
            .push(DimensionSeries {
                dimension: k.dimension.clone(),
                dimension_value: k.dimension_value.clone(),
                points,
            });
    }
    groups
        .into_iter()
        .map(|((rt, rid, region, metric), timeseries)| MetricEnvelope {
            schema_version: ENVELOPE_SCHEMA_VERSION,
            resource_type: rt.to_string(),
            resource_id: rid.to_string(),
            region: region.to_string(),
            metric_name: metric.to_string(),
            unit: unit.to_string(),
            timeseries,
        })
        .collect()
}

fn byte_offset(document: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = document
        .split_inclusive(|b| *b == b'\n')
        .take(line - 1)
        .map(<[u8]>::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(document.len())
}

fn violation(path: &str, message: impl Into<String>) -> IngestError {
    IngestError::SchemaViolation {
        path: path.to_string(),
        message: message.into(),
    }
}

fn as_object<'a>(value: &'a Value, path: &str) -> Result<&'a Map<String, Value>, IngestError> {
    value.as_object().ok_or_else(|| violation(path, "expected an object"))
}

fn required_string(obj: &Map<String, Value>, field: &str, path: &str) -> Result<String, IngestError> {
    let p = format!("{path}.{field}");
    match obj.get(field) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(violation(&p, "expected a string")),
        None => Err(violation(&p, "missing required field")),
    }
}

fn optional_string(obj: &Map<String, Value>, field: &str, path: &str) -> Result<String, IngestError> {
    match obj.get(field) {
        None | Some(Value::Null) => Ok(String::new()),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(violation(&format!("{path}.{field}"), "expected a string")),
    }
}

fn envelope_from_value(value: &Value, path: &str) -> Result<MetricEnvelope, IngestError> {
    let obj = as_object(value, path)?;
    let schema_version = match obj.get("schema_version") {
        None => ENVELOPE_SCHEMA_VERSION,
        Some(v) => match v.as_u64() {
            Some(n) if n == ENVELOPE_SCHEMA_VERSION as u64 => n as u32,
            _ => {
                return Err(violation(
                    &format!("{path}.schema_version"),
                    format!("unsupported schema version {v}"),
                ))
            }
        },
    };
    let metric_name = required_string(obj, "metric_name", path)?;
    if metric_name.is_empty() {
        return Err(violation(&format!("{path}.metric_name"), "must not be empty"));
    }
    let ts_path = format!("{path}.timeseries");
    let timeseries = match obj.get("timeseries") {
        Some(Value::Array(items)) => items
            .iter()
            .enumerate()
            .map(|(i, item)| dimension_series(item, &format!("{ts_path}[{i}]")))
            .collect::<Result<Vec<_>, _>>()?,
        Some(_) => return Err(violation(&ts_path, "expected an array")),
        None => return Err(violation(&ts_path, "missing required field")),
    };
    Ok(MetricEnvelope {
        schema_version,
        resource_type: optional_string(obj, "resource_type", path)?,
        resource_id: optional_string(obj, "resource_id", path)?,
        region: optional_string(obj, "region", path)?,
        metric_name,
        unit: optional_string(obj, "unit", path)?,
        timeseries,
    })
}

fn dimension_series(value: &Value, path: &str) -> Result<DimensionSeries, IngestError> {
    let obj = as_object(value, path)?;
    let points_path = format!("{path}.points");
    let points = match obj.get("points") {
        Some(Value::Array(items)) => items
            .iter()
            .enumerate()
            .map(|(i, item)| raw_point(item, &format!("{points_path}[{i}]")))
            .collect::<Result<Vec<_>, _>>()?,
        Some(_) => return Err(violation(&points_path, "expected an array")),
        None => return Err(violation(&points_path, "missing required field")),
    };
    Ok(DimensionSeries {
        dimension: optional_string(obj, "dimension", path)?,
        dimension_value: optional_string(obj, "dimension_value", path)?,
        points,
    })
}

fn raw_point(value: &Value, path: &str) -> Result<RawPoint, IngestError> {
    let obj = as_object(value, path)?;
    let ts_text = required_string(obj, "timestamp", path)?;
    let timestamp = DateTime::parse_from_rfc3339(&ts_text)
        .map_err(|e| violation(&format!("{path}.timestamp"), format!("not RFC3339: {e}")))?
        .with_timezone(&Utc);
    let value = match obj.get("value") {
        None | Some(Value::Null) => None,
        Some(Value::Number(n)) => Some(
            n.as_f64()
                .filter(|v| v.is_finite())
                .ok_or_else(|| violation(&format!("{path}.value"), "not a finite number"))?,
        ),
        Some(_) => return Err(violation(&format!("{path}.value"), "expected a number or null")),
    };
    Ok(RawPoint { timestamp, value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, TimeZone};
    use proptest::prelude::*;

    const SAMPLE: &str = r#"{
        "schema_version": 1,
        "resource_type": "Microsoft.Storage",
        "resource_id": "/subscriptions/0000/storageAccounts/acct1",
        "region": "westus2",
        "metric_name": "Availability",
        "unit": "Percent",
        "timeseries": [
            {"dimension": "ApiName", "dimension_value": "GetBlob", "points": [
                {"timestamp": "2022-05-15T00:10:00Z", "value": 99.5},
                {"timestamp": "2022-05-15T00:00:00Z", "value": 100.0},
                {"timestamp": "2022-05-15T00:05:00Z", "value": null}
            ]}
        ]
    }"#;

    #[test]
    fn single_dimension_value() {
        let parsed = parse_metric_json(SAMPLE.as_bytes()).unwrap();
        assert_eq!(parsed.len(), 1);
        let s = &parsed[0];
        assert_eq!(s.key.metric_name, "Availability");
        assert_eq!(s.key.provider_id, "Microsoft.Storage");
        assert_eq!(s.key.dimension_value, "GetBlob");
        assert_eq!(s.points.len(), 3);
        assert!(s.points.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
        assert_eq!(s.points[1].value, None);
        assert_eq!(s.gap_count(), 1);
        assert_eq!(s.metric_points().len(), 2);
    }

    #[test]
    fn two_dimension_values_give_two_keys() {
        let doc = r#"[{"metric_name": "Transactions", "region": "eastus", "timeseries": [
            {"dimension": "ApiName", "dimension_value": "GetBlob", "points": []},
            {"dimension": "ApiName", "dimension_value": "PutBlob", "points": []}
        ]}]"#;
        let parsed = parse_metric_json(doc.as_bytes()).unwrap();
        assert_eq!(parsed.len(), 2);
        let (a, b) = (&parsed[0].key, &parsed[1].key);
        assert_ne!(a, b);
        let mut b2 = b.clone();
        b2.dimension_value = a.dimension_value.clone();
        assert_eq!(a, &b2);
    }

    #[test]
    fn missing_metric_name_names_path() {
        let doc = r#"[{"timeseries": []}, {"metric_name": "x"}]"#;
        match parse_metric_json(doc.as_bytes()) {
            Err(IngestError::SchemaViolation { path, .. }) => assert_eq!(path, "$[0].metric_name"),
            other => panic!("unexpected {other:?}"),
        }
        match parse_metric_json(br#"{"metric_name": "x"}"#) {
            Err(IngestError::SchemaViolation { path, .. }) => assert_eq!(path, "$.timeseries"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_point_value_names_path() {
        let doc = r#"{"metric_name": "m", "timeseries": [{"points": [{"timestamp": "2022-05-15T00:00:00Z", "value": "high"}]}]}"#;
        match parse_metric_json(doc.as_bytes()) {
            Err(IngestError::SchemaViolation { path, .. }) => assert_eq!(path, "$.timeseries[0].points[0].value"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_json_reports_offset() {
        let doc = b"{\n  \"metric_name\": ,\n}";
        match parse_metric_json(doc) {
            Err(IngestError::MalformedJson { offset, .. }) => assert_eq!(doc[offset], b','),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn point_count_is_conserved() {
        let parsed = parse_metric_json(SAMPLE.as_bytes()).unwrap();
        let total: usize = parsed.iter().map(|s| s.points.len()).sum();
        assert_eq!(total, 3);
    }

    fn envelope_strategy() -> impl Strategy<Value = MetricEnvelope> {
        let point = (0i64..100_000, prop::option::weighted(0.8, -1e9..1e9f64)).prop_map(|(s, v)| RawPoint {
            timestamp: Utc.with_ymd_and_hms(2022, 5, 15, 0, 0, 0).unwrap() + Duration::seconds(s),
            value: v,
        });
        let dim = ("[a-zA-Z]{0,8}", "[a-zA-Z0-9 ]{0,8}", prop::collection::vec(point, 0..10)).prop_map(
            |(dimension, dimension_value, points)| DimensionSeries {
                dimension,
                dimension_value,
                points,
            },
        );
        (
            "[A-Za-z.]{0,12}",
            "[a-z0-9/]{0,12}",
            "[a-z0-9]{0,8}",
            "[A-Za-z]{1,12}",
            "[A-Za-z%]{0,6}",
            prop::collection::vec(dim, 0..4),
        )
            .prop_map(|(rt, rid, region, metric, unit, timeseries)| MetricEnvelope {
                schema_version: ENVELOPE_SCHEMA_VERSION,
                resource_type: rt,
                resource_id: rid,
                region,
                metric_name: metric,
                unit,
                timeseries,
            })
    }

    proptest! {
        #[test]
        fn serialize_parse_is_fixed_point(envelopes in prop::collection::vec(envelope_strategy(), 1..3)) {
            let doc = serde_json::to_vec(&envelopes).unwrap();
            let parsed = parse_envelopes(&doc).unwrap();
            prop_assert_eq!(&parsed, &envelopes);
            let again = parse_envelopes(&serde_json::to_vec(&parsed).unwrap()).unwrap();
            prop_assert_eq!(again, parsed);

            let flat = parse_metric_json(&doc).unwrap();
            let expected: usize = envelopes.iter().map(|e| e.timeseries.iter().map(|t| t.points.len()).sum::<usize>()).sum();
            prop_assert_eq!(flat.iter().map(|s| s.points.len()).sum::<usize>(), expected);
            prop_assert_eq!(flat.len(), envelopes.iter().map(|e| e.timeseries.len()).sum::<usize>());
        }
    }

    #[test]
    fn series_round_trip_through_envelopes() {
        use crate::pipeline::synth;
        use chrono::{Duration, TimeZone};
        let t0 = Utc.with_ymd_and_hms(2022, 1, 1, 0, 0, 0).unwrap();
        let series = synth::gapped_sinusoids(3, 40, 12, 0.2, t0, Duration::minutes(5), 2);
        let envelopes = envelopes_from_series(&series, "Percent");
        assert_eq!(envelopes.len(), 1);
        let doc = serde_json::to_vec(&envelopes).unwrap();
        let parsed = parse_metric_json(&doc).unwrap();
        assert_eq!(parsed.len(), 3);
        for (p, s) in parsed.iter().zip(&series) {
            assert_eq!(&p.key, s.key());
            assert_eq!(p.points.len(), 40);
            assert_eq!(p.gap_count(), s.gap_count());
        }
    }
}

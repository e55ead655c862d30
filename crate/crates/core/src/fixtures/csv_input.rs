//! Small hand-written datasets in CSV, for tests.
//!
//! Columns follow the Parquet schemas: traces `traceID, spanID,
//! parentSpanID, service, pod, node, startTime, duration, statusCode`;
//! metrics `component, node, timestamp, metric_name, value`; logs
//! `component, node, timestamp, message`. `pod`, `node`, `parentSpanID` and
//! `statusCode` may be empty.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Deserialize;

use super::FixtureError;
use crate::ingest::{
    sniff_timestamp_unit, CollectionUnits, LogRecord, MetricName, MetricSample, SpanRecord, TelemetryDataset,
};
use crate::time::{TimeUnit, TimeWindow};

#[derive(Deserialize)]
struct CsvSpan {
    #[serde(rename = "traceID")]
    trace_id: String,
    #[serde(rename = "spanID")]
    span_id: String,
    #[serde(rename = "parentSpanID", default)]
    parent_span_id: Option<String>,
    service: String,
    #[serde(default)]
    pod: Option<String>,
    #[serde(default)]
    node: Option<String>,
    #[serde(rename = "startTime")]
    start_time: i64,
    duration: i64,
    #[serde(rename = "statusCode", default)]
    status_code: Option<u32>,
}

#[derive(Deserialize)]
struct CsvMetric {
    component: String,
    #[serde(default)]
    node: Option<String>,
    timestamp: i64,
    metric_name: MetricName,
    value: f64,
}

#[derive(Deserialize)]
struct CsvLog {
    component: String,
    #[serde(default)]
    node: Option<String>,
    timestamp: i64,
    message: String,
}

fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, FixtureError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| FixtureError::Csv(format!("{}: {e}", path.display())))?;
    reader
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| FixtureError::Csv(format!("{}: {e}", path.display())))
}

fn unit_of(times: &[i64], path: Option<&Path>) -> Result<TimeUnit, FixtureError> {
    if times.is_empty() {
        return Ok(TimeUnit::Microseconds);
    }
    sniff_timestamp_unit(times).map_err(|e| {
        FixtureError::Csv(format!(
            "{}: {e}",
            path.map_or_else(String::new, |p| p.display().to_string())
        ))
    })
}

fn blank_to_none(v: Option<String>) -> Option<String> {
    v.filter(|s| !s.trim().is_empty())
}

/// Reads CSV collections into a dataset restricted to `window`; each path is optional.
pub fn load_csv_dataset(
    traces: Option<&Path>,
    metrics: Option<&Path>,
    logs: Option<&Path>,
    window: TimeWindow,
) -> Result<TelemetryDataset, FixtureError> {
    let spans: Vec<SpanRecord> = match traces {
        Some(p) => read_rows::<CsvSpan>(p)?
            .into_iter()
            .map(|r| {
                let mut tags = BTreeMap::new();
                if let Some(node) = blank_to_none(r.node) {
                    tags.insert("node_name".to_string(), node);
                }
                SpanRecord {
                    pod: blank_to_none(r.pod).unwrap_or_else(|| r.service.clone()),
                    trace_id: r.trace_id,
                    span_id: r.span_id,
                    parent_span_id: blank_to_none(r.parent_span_id),
                    service: r.service,
                    start_time: r.start_time,
                    duration: r.duration,
                    status_code: r.status_code,
                    tags,
                }
            })
            .collect(),
        None => Vec::new(),
    };
    let samples: Vec<MetricSample> = match metrics {
        Some(p) => read_rows::<CsvMetric>(p)?
            .into_iter()
            .map(|r| MetricSample {
                component: r.component,
                node: blank_to_none(r.node),
                metric_name: r.metric_name,
                timestamp: r.timestamp,
                value: r.value,
            })
            .collect(),
        None => Vec::new(),
    };
    let records: Vec<LogRecord> = match logs {
        Some(p) => read_rows::<CsvLog>(p)?
            .into_iter()
            .map(|r| LogRecord {
                component: r.component,
                node: blank_to_none(r.node),
                timestamp: r.timestamp,
                message: r.message,
            })
            .collect(),
        None => Vec::new(),
    };

    let units = CollectionUnits {
        spans: unit_of(&spans.iter().map(|s| s.start_time).collect::<Vec<_>>(), traces)?,
        metrics: unit_of(&samples.iter().map(|m| m.timestamp).collect::<Vec<_>>(), metrics)?,
        logs: unit_of(&records.iter().map(|l| l.timestamp).collect::<Vec<_>>(), logs)?,
    };
    let mut ds = TelemetryDataset {
        spans,
        metrics: samples,
        logs: records,
        case_window: window,
        context_window: window,
        units,
        warnings: Vec::new(),
    };
    ds.retain_window(&window);
    Ok(ds)
}

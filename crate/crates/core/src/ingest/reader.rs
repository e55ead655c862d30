use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use arrow_array::RecordBatch;
use parquet::arrow::arrow_reader::ParquetRecordBatchReaderBuilder;
use rayon::prelude::*;
use serde_json::Value;

use super::columns::{self, find, require};
use super::{
    sniff_timestamp_unit, CollectionUnits, DatasetPaths, IngestError, LogRecord, MetricName, MetricSample, SpanRecord,
    TelemetryDataset,
};
use crate::time::{TimeUnit, TimeWindow};

const TRACE_ID: &[&str] = &["traceID", "trace_id", "traceId"];
const SPAN_ID: &[&str] = &["spanID", "span_id", "spanId"];
const PARENT: &[&str] = &[
    "parentSpanID",
    "parent_span_id",
    "parentSpanId",
    "parent_id",
    "references",
];
const SERVICE: &[&str] = &["service", "serviceName", "service_name", "process"];
const POD: &[&str] = &["pod", "pod_name", "podName"];
const NODE: &[&str] = &["node", "node_name", "nodeName", "kubernetes_node", "hostname"];
const START: &[&str] = &[
    "startTime",
    "start_time",
    "startTimeMicros",
    "startTimeMillis",
    "timestamp",
];
const DURATION: &[&str] = &["duration", "duration_us"];
const STATUS: &[&str] = &["statusCode", "status_code", "status"];
const TAGS: &[&str] = &["tags", "attributes"];

const METRIC_COMPONENT: &[&str] = &["component", "object", "cmdb_id", "pod", "instance", "service"];
const METRIC_NAME: &[&str] = &["metric_name", "metric", "kpi_name", "kpi_key"];
const METRIC_VALUE: &[&str] = &["value"];
const TIMESTAMP: &[&str] = &["timestamp", "@timestamp", "time", "ts"];

const LOG_COMPONENT: &[&str] = &["component", "pod", "k8_pod", "pod_name", "service"];
const MESSAGE: &[&str] = &["message", "log", "body", "msg"];

/// Loads every listed file and keeps the records inside `window`.
///
/// Files are read in parallel. Each collection ends up in the finest time
/// unit detected across its files.
pub fn load_dataset(paths: &DatasetPaths, window: TimeWindow) -> Result<TelemetryDataset, IngestError> {
    paths.validate()?;
    let (spans, (metrics, logs)) = rayon::join(
        || load_collection(&paths.trace_paths, read_traces),
        || {
            rayon::join(
                || load_collection(&paths.metric_paths, read_metrics),
                || load_collection(&paths.log_paths, read_logs),
            )
        },
    );
    let (mut spans, metrics, logs) = (spans?, metrics?, logs?);

    let mut warnings = Vec::new();
    warnings.append(&mut spans.warnings);
    let mut metrics = metrics;
    warnings.append(&mut metrics.warnings);
    let mut logs = logs;
    warnings.append(&mut logs.warnings);

    let units = CollectionUnits {
        spans: spans.unit,
        metrics: metrics.unit,
        logs: logs.unit,
    };
    let mut dataset = TelemetryDataset {
        spans: spans.records,
        metrics: metrics.records,
        logs: logs.records,
        case_window: window,
        context_window: window,
        units,
        warnings,
    };
    dataset.retain_window(&window);
    Ok(dataset)
}

trait Timed {
    fn rescale(&mut self, from: TimeUnit, to: TimeUnit);
}

impl Timed for SpanRecord {
    fn rescale(&mut self, from: TimeUnit, to: TimeUnit) {
        self.start_time = from.convert(self.start_time, to);
    }
}

impl Timed for MetricSample {
    fn rescale(&mut self, from: TimeUnit, to: TimeUnit) {
        self.timestamp = from.convert(self.timestamp, to);
    }
}

impl Timed for LogRecord {
    fn rescale(&mut self, from: TimeUnit, to: TimeUnit) {
        self.timestamp = from.convert(self.timestamp, to);
    }
}

struct Chunk<T> {
    records: Vec<T>,
    unit: TimeUnit,
    warnings: Vec<String>,
}

fn load_collection<T, F>(paths: &[PathBuf], read: F) -> Result<Chunk<T>, IngestError>
where
    T: Timed + Send,
    F: Fn(&Path, &RecordBatch, &mut Vec<String>) -> Result<(Vec<T>, Vec<i64>, Option<TimeUnit>), IngestError> + Sync,
{
    let chunks: Vec<Chunk<T>> = paths
        .par_iter()
        .map(|path| read_file(path, &read))
        .collect::<Result<_, _>>()?;
    let unit = chunks
        .iter()
        .filter(|c| !c.records.is_empty())
        .map(|c| c.unit)
        .reduce(TimeUnit::finer)
        .unwrap_or(TimeUnit::Microseconds);
    let mut out = Chunk {
        records: Vec::new(),
        unit,
        warnings: Vec::new(),
    };
    for mut chunk in chunks {
        if chunk.unit != unit {
            for r in &mut chunk.records {
                r.rescale(chunk.unit, unit);
            }
        }
        out.records.append(&mut chunk.records);
        out.warnings.append(&mut chunk.warnings);
    }
    Ok(out)
}

fn read_file<T, F>(path: &Path, read: &F) -> Result<Chunk<T>, IngestError>
where
    F: Fn(&Path, &RecordBatch, &mut Vec<String>) -> Result<(Vec<T>, Vec<i64>, Option<TimeUnit>), IngestError>,
{
    let not_readable = |reason: String| IngestError::FileNotReadable {
        path: path.to_path_buf(),
        reason,
    };
    let file = File::open(path).map_err(|e| not_readable(e.to_string()))?;
    let reader = ParquetRecordBatchReaderBuilder::try_new(file)
        .and_then(|b| b.build())
        .map_err(|e| not_readable(e.to_string()))?;

    let mut records = Vec::new();
    let mut raw_times = Vec::new();
    let mut fixed_unit = None;
    let mut warnings = Vec::new();
    for batch in reader {
        let batch = batch.map_err(|e| not_readable(e.to_string()))?;
        let (mut recs, mut times, unit) = read(path, &batch, &mut warnings)?;
        records.append(&mut recs);
        raw_times.append(&mut times);
        fixed_unit = fixed_unit.or(unit);
    }
    let unit = match fixed_unit {
        Some(u) => u,
        None if raw_times.is_empty() => TimeUnit::Microseconds,
        None => sniff_timestamp_unit(&raw_times).map_err(|e| match e {
            IngestError::AmbiguousUnit { median } => IngestError::TypeMismatch {
                path: path.to_path_buf(),
                column: "timestamp".into(),
                detail: format!("cannot infer the time unit of median value {median}"),
            },
            other => other,
        })?,
    };
    Ok(Chunk {
        records,
        unit,
        warnings,
    })
}

fn non_empty(v: &Option<String>) -> Option<&str> {
    v.as_deref().map(str::trim).filter(|s| !s.is_empty())
}

/// Parses a tag payload: a JSON object, a JSON list of `{key, value}`, or empty.
fn parse_tags(raw: Option<&str>) -> BTreeMap<String, String> {
    let mut tags = BTreeMap::new();
    let Some(raw) = raw.map(str::trim).filter(|s| !s.is_empty()) else {
        return tags;
    };
    match serde_json::from_str::<Value>(raw) {
        Ok(Value::Object(map)) => {
            for (k, v) in map {
                tags.insert(k, value_text(&v));
            }
        }
        Ok(Value::Array(items)) => {
            for item in items {
                if let (Some(k), Some(v)) = (item.get("key").and_then(Value::as_str), item.get("value")) {
                    tags.insert(k.to_string(), value_text(v));
                }
            }
        }
        _ => {}
    }
    tags
}

fn value_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Reads a parent id from a plain id or a Jaeger-style `references` list.
/// Returns the parent and whether more than one parent was listed.
fn parse_parent(raw: Option<&str>, is_references: bool) -> (Option<String>, bool) {
    let Some(raw) = raw.map(str::trim).filter(|s| !s.is_empty()) else {
        return (None, false);
    };
    if !is_references {
        return (Some(raw.to_string()), false);
    }
    let refs: Vec<String> = match serde_json::from_str::<Value>(raw) {
        Ok(Value::Array(items)) => items
            .iter()
            .filter_map(|r| r.get("spanID").or_else(|| r.get("spanId")).and_then(Value::as_str))
            .map(str::to_string)
            .collect(),
        Ok(Value::String(s)) => vec![s],
        _ => vec![raw.to_string()],
    };
    let multi = refs.len() > 1;
    (refs.into_iter().find(|s| !s.is_empty()), multi)
}

/// Service, pod and node from a Jaeger-style `process` JSON object.
fn parse_process(raw: &str) -> (Option<String>, Option<String>, Option<String>) {
    let Ok(value) = serde_json::from_str::<Value>(raw) else {
        return (Some(raw.to_string()), None, None);
    };
    let service = value.get("serviceName").and_then(Value::as_str).map(str::to_string);
    let tags = parse_tags(value.get("tags").map(|t| t.to_string()).as_deref());
    let pod = ["podName", "pod_name", "name"]
        .iter()
        .find_map(|k| tags.get(*k).cloned());
    let node = ["node_name", "nodeName", "hostname"]
        .iter()
        .find_map(|k| tags.get(*k).cloned());
    (service, pod, node)
}

type Read<T> = Result<(Vec<T>, Vec<i64>, Option<TimeUnit>), IngestError>;

fn read_traces(path: &Path, batch: &RecordBatch, warnings: &mut Vec<String>) -> Read<SpanRecord> {
    let (name, col) = require(path, batch, TRACE_ID)?;
    let trace_ids = columns::strings(path, name, col)?;
    let (name, col) = require(path, batch, SPAN_ID)?;
    let span_ids = columns::strings(path, name, col)?;
    let (parent_name, col) = require(path, batch, PARENT)?;
    let is_references = parent_name.eq_ignore_ascii_case("references");
    let parents = columns::strings(path, parent_name, col)?;
    let (service_name, col) = require(path, batch, SERVICE)?;
    let is_process = service_name.eq_ignore_ascii_case("process");
    let services = columns::strings(path, service_name, col)?;
    let pods = match find(batch, POD) {
        Some((n, c)) => Some(columns::strings(path, n, c)?),
        None => None,
    };
    let nodes = match find(batch, NODE) {
        Some((n, c)) => Some(columns::strings(path, n, c)?),
        None => None,
    };
    let (name, col) = require(path, batch, START)?;
    let starts = columns::timestamps(path, name, col)?;
    let (name, col) = require(path, batch, DURATION)?;
    let durations = columns::integers(path, name, col)?;
    let statuses = match find(batch, STATUS) {
        Some((n, c)) => Some(columns::integers(path, n, c)?),
        None => None,
    };
    let (name, col) = require(path, batch, TAGS)?;
    let tags = columns::strings(path, name, col)?;

    let mut records = Vec::with_capacity(batch.num_rows());
    let mut times = Vec::new();
    let mut skipped = 0usize;
    let mut multi_parent = 0usize;
    for i in 0..batch.num_rows() {
        let (Some(trace_id), Some(span_id), Some(start)) =
            (non_empty(&trace_ids[i]), non_empty(&span_ids[i]), starts.values[i])
        else {
            skipped += 1;
            continue;
        };
        let (mut service, mut pod, mut node) = (None, None, None);
        if let Some(raw) = non_empty(&services[i]) {
            if is_process {
                (service, pod, node) = parse_process(raw);
            } else {
                service = Some(raw.to_string());
            }
        }
        if let Some(p) = pods.as_ref().and_then(|p| non_empty(&p[i])) {
            pod = Some(p.to_string());
        }
        if let Some(n) = nodes.as_ref().and_then(|n| non_empty(&n[i])) {
            node = Some(n.to_string());
        }
        let Some(service) = service.or_else(|| pod.as_deref().map(|p| crate::component::derive_service(p).to_string()))
        else {
            skipped += 1;
            continue;
        };
        let duration = durations[i].unwrap_or(0);
        if duration < 0 {
            return Err(IngestError::TypeMismatch {
                path: path.to_path_buf(),
                column: "duration".into(),
                detail: format!("negative duration {duration} for span {span_id}"),
            });
        }
        let status_code = match statuses.as_ref().and_then(|s| s[i]) {
            Some(code) if code < 0 => {
                return Err(IngestError::TypeMismatch {
                    path: path.to_path_buf(),
                    column: "status_code".into(),
                    detail: format!("negative status code {code}"),
                })
            }
            Some(code) => Some(code as u32),
            None => None,
        };
        let (parent_span_id, multi) = parse_parent(parents[i].as_deref(), is_references);
        if multi {
            multi_parent += 1;
        }
        let mut tag_map = parse_tags(tags[i].as_deref());
        if let Some(node) = node {
            tag_map.entry("node_name".to_string()).or_insert(node);
        }
        times.push(start);
        records.push(SpanRecord {
            trace_id: trace_id.to_string(),
            span_id: span_id.to_string(),
            parent_span_id,
            pod: pod.unwrap_or_else(|| service.clone()),
            service,
            start_time: start,
            duration,
            status_code,
            tags: tag_map,
        });
    }
    if skipped > 0 {
        warnings.push(format!(
            "{}: skipped {skipped} spans with missing ids, service or start time",
            path.display()
        ));
    }
    if multi_parent > 0 {
        warnings.push(format!(
            "{}: {multi_parent} spans list more than one parent; the first reference is used",
            path.display()
        ));
    }
    Ok((records, times, starts.unit))
}

fn read_metrics(path: &Path, batch: &RecordBatch, warnings: &mut Vec<String>) -> Read<MetricSample> {
    let (name, col) = require(path, batch, METRIC_COMPONENT)?;
    let components = columns::strings(path, name, col)?;
    let nodes = match find(batch, NODE) {
        Some((n, c)) => Some(columns::strings(path, n, c)?),
        None => None,
    };
    let (name, col) = require(path, batch, TIMESTAMP)?;
    let stamps = columns::timestamps(path, name, col)?;

    // long layout: one metric name column plus one value column
    #[allow(clippy::type_complexity)]
    let mut series: Vec<(Option<MetricName>, Vec<Option<MetricName>>, Vec<Option<f64>>)> = Vec::new();
    let mut unknown = 0usize;
    if let Some((name_col, col)) = find(batch, METRIC_NAME) {
        let names = columns::strings(path, name_col, col)?;
        let (value_col, col) = require(path, batch, METRIC_VALUE)?;
        let values = columns::floats(path, value_col, col)?;
        let parsed = names
            .iter()
            .map(|n| {
                let m = n.as_deref().and_then(|n| n.parse::<MetricName>().ok());
                if m.is_none() {
                    unknown += 1;
                }
                m
            })
            .collect();
        series.push((None, parsed, values));
    } else {
        // wide layout: one column per metric
        for field in batch.schema_ref().fields() {
            if let Ok(metric) = field.name().parse::<MetricName>() {
                let col = batch.column_by_name(field.name()).expect("field exists");
                series.push((Some(metric), Vec::new(), columns::floats(path, field.name(), col)?));
            }
        }
        if series.is_empty() {
            return Err(IngestError::SchemaMismatch {
                path: path.to_path_buf(),
                column: METRIC_NAME[0].to_string(),
            });
        }
    }

    let mut records = Vec::new();
    let mut times = Vec::new();
    let mut non_finite = 0usize;
    let mut skipped = 0usize;
    for i in 0..batch.num_rows() {
        let (Some(component), Some(ts)) = (non_empty(&components[i]), stamps.values[i]) else {
            skipped += 1;
            continue;
        };
        times.push(ts);
        let node = nodes.as_ref().and_then(|n| non_empty(&n[i])).map(str::to_string);
        for (fixed, names, values) in &series {
            let metric = match fixed {
                Some(m) => Some(*m),
                None => names[i],
            };
            let (Some(metric_name), Some(value)) = (metric, values[i]) else {
                continue;
            };
            if !value.is_finite() {
                non_finite += 1;
                continue;
            }
            records.push(MetricSample {
                component: component.to_string(),
                node: node.clone(),
                metric_name,
                timestamp: ts,
                value,
            });
        }
    }
    if unknown > 0 {
        warnings.push(format!(
            "{}: ignored {unknown} rows with unrecognised metric names",
            path.display()
        ));
    }
    if non_finite > 0 {
        warnings.push(format!(
            "{}: dropped {non_finite} non-finite metric values",
            path.display()
        ));
    }
    if skipped > 0 {
        warnings.push(format!(
            "{}: skipped {skipped} rows without component or timestamp",
            path.display()
        ));
    }
    Ok((records, times, stamps.unit))
}

fn read_logs(path: &Path, batch: &RecordBatch, warnings: &mut Vec<String>) -> Read<LogRecord> {
    let (name, col) = require(path, batch, LOG_COMPONENT)?;
    let components = columns::strings(path, name, col)?;
    let nodes = match find(batch, NODE) {
        Some((n, c)) => Some(columns::strings(path, n, c)?),
        None => None,
    };
    let (name, col) = require(path, batch, TIMESTAMP)?;
    let stamps = columns::timestamps(path, name, col)?;
    let (name, col) = require(path, batch, MESSAGE)?;
    let messages = columns::strings(path, name, col)?;

    let mut records = Vec::with_capacity(batch.num_rows());
    let mut times = Vec::new();
    let mut skipped = 0usize;
    for i in 0..batch.num_rows() {
        let (Some(component), Some(ts), Some(message)) =
            (non_empty(&components[i]), stamps.values[i], messages[i].as_deref())
        else {
            skipped += 1;
            continue;
        };
        if message.trim().is_empty() {
            skipped += 1;
            continue;
        }
        times.push(ts);
        records.push(LogRecord {
            component: component.to_string(),
            node: nodes.as_ref().and_then(|n| non_empty(&n[i])).map(str::to_string),
            timestamp: ts,
            message: message.to_string(),
        });
    }
    if skipped > 0 {
        warnings.push(format!(
            "{}: skipped {skipped} log rows with missing fields or blank messages",
            path.display()
        ));
    }
    Ok((records, times, stamps.unit))
}

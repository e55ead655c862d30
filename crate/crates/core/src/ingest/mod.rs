//! Telemetry records and Parquet ingestion.
//!
//! [`load_dataset`] reads trace, metric and log files into typed collections
//! and keeps only the rows whose timestamp falls inside the requested window.
//! Column order does not matter and unknown columns are ignored; a missing
//! required column or a value of the wrong type is an error.

#[cfg(feature = "parquet")]
mod columns;
#[cfg(feature = "parquet")]
mod reader;
mod sniff;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::{TimeUnit, TimeWindow};

#[cfg(feature = "parquet")]
pub use reader::load_dataset;
pub use sniff::sniff_timestamp_unit;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {reason}")]
    FileNotReadable { path: PathBuf, reason: String },
    #[error("{path}: required column `{column}` is missing")]
    SchemaMismatch { path: PathBuf, column: String },
    #[error("{path}: column `{column}` has the wrong type: {detail}")]
    TypeMismatch {
        path: PathBuf,
        column: String,
        detail: String,
    },
    #[error("time window start ({start}) must be before end ({end})")]
    EmptyWindow { start: i64, end: i64 },
    #[error("no timestamp unit places the median {median} between 2000 and 2100")]
    AmbiguousUnit { median: i64 },
    #[error("invalid dataset paths: {0}")]
    InvalidPaths(String),
}

/// Input files grouped by telemetry type.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetPaths {
    #[serde(default)]
    pub trace_paths: Vec<PathBuf>,
    #[serde(default)]
    pub metric_paths: Vec<PathBuf>,
    #[serde(default)]
    pub log_paths: Vec<PathBuf>,
}

impl DatasetPaths {
    pub fn validate(&self) -> Result<(), IngestError> {
        let all: Vec<&PathBuf> = self
            .trace_paths
            .iter()
            .chain(&self.metric_paths)
            .chain(&self.log_paths)
            .collect();
        if all.is_empty() {
            return Err(IngestError::InvalidPaths("no input files given".into()));
        }
        let mut seen = BTreeSet::new();
        for p in all {
            if !seen.insert(p) {
                return Err(IngestError::InvalidPaths(format!(
                    "{} is listed more than once",
                    p.display()
                )));
            }
        }
        Ok(())
    }
}

/// Tag keys that may carry a gRPC status code.
pub const STATUS_TAG_KEYS: [&str; 4] = ["rpc.grpc.status_code", "grpc.status_code", "status.code", "status_code"];

/// Tag keys that may name the hosting node.
pub const NODE_TAG_KEYS: [&str; 4] = ["node_name", "node", "k8s.node.name", "hostname"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanRecord {
    pub trace_id: String,
    pub span_id: String,
    pub parent_span_id: Option<String>,
    pub service: String,
    pub pod: String,
    /// Start instant in the dataset's span time unit.
    pub start_time: i64,
    /// Duration in microseconds.
    pub duration: i64,
    /// Numeric status column, when the source had one.
    pub status_code: Option<u32>,
    pub tags: BTreeMap<String, String>,
}

impl SpanRecord {
    /// The effective gRPC status: the numeric column wins, tags are the fallback.
    pub fn grpc_status(&self) -> u32 {
        if let Some(code) = self.status_code {
            return code;
        }
        STATUS_TAG_KEYS
            .iter()
            .filter_map(|k| self.tags.get(*k))
            .find_map(|v| parse_grpc_status(v))
            .unwrap_or(0)
    }

    pub fn node(&self) -> Option<&str> {
        NODE_TAG_KEYS
            .iter()
            .filter_map(|k| self.tags.get(*k))
            .map(String::as_str)
            .find(|v| !v.is_empty())
    }
}

/// Parses a gRPC status given as a number or a canonical code name.
pub fn parse_grpc_status(text: &str) -> Option<u32> {
    let text = text.trim();
    if let Ok(n) = text.parse::<u32>() {
        return Some(n);
    }
    const NAMES: [&str; 17] = [
        "OK",
        "CANCELLED",
        "UNKNOWN",
        "INVALID_ARGUMENT",
        "DEADLINE_EXCEEDED",
        "NOT_FOUND",
        "ALREADY_EXISTS",
        "PERMISSION_DENIED",
        "RESOURCE_EXHAUSTED",
        "FAILED_PRECONDITION",
        "ABORTED",
        "OUT_OF_RANGE",
        "UNIMPLEMENTED",
        "INTERNAL",
        "UNAVAILABLE",
        "DATA_LOSS",
        "UNAUTHENTICATED",
    ];
    let upper = text.to_ascii_uppercase();
    NAMES.iter().position(|n| *n == upper).map(|i| i as u32)
}

/// The closed set of metrics the analyzers understand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    CpuUsage,
    MemoryUsage,
    DiskReadBytes,
    NetworkTransmit,
    Request,
    Response,
    Rrt,
    Timeout,
    ClientError,
    ServerError,
    ErrorRatio,
}

impl MetricName {
    pub const ALL: [MetricName; 11] = [
        MetricName::CpuUsage,
        MetricName::MemoryUsage,
        MetricName::DiskReadBytes,
        MetricName::NetworkTransmit,
        MetricName::Request,
        MetricName::Response,
        MetricName::Rrt,
        MetricName::Timeout,
        MetricName::ClientError,
        MetricName::ServerError,
        MetricName::ErrorRatio,
    ];

    pub const fn as_str(self) -> &'static str {
        match self {
            MetricName::CpuUsage => "cpu_usage",
            MetricName::MemoryUsage => "memory_usage",
            MetricName::DiskReadBytes => "disk_read_bytes",
            MetricName::NetworkTransmit => "network_transmit",
            MetricName::Request => "request",
            MetricName::Response => "response",
            MetricName::Rrt => "rrt",
            MetricName::Timeout => "timeout",
            MetricName::ClientError => "client_error",
            MetricName::ServerError => "server_error",
            MetricName::ErrorRatio => "error_ratio",
        }
    }

    pub const fn unit(self) -> &'static str {
        match self {
            MetricName::CpuUsage | MetricName::MemoryUsage => "%",
            MetricName::DiskReadBytes | MetricName::NetworkTransmit => "B",
            MetricName::Rrt => "ms",
            MetricName::ErrorRatio => "",
            _ => "",
        }
    }

    /// Counts are summed when pods roll up into a service; the rest are averaged.
    pub const fn is_count(self) -> bool {
        matches!(
            self,
            MetricName::DiskReadBytes
                | MetricName::NetworkTransmit
                | MetricName::Request
                | MetricName::Response
                | MetricName::Timeout
                | MetricName::ClientError
                | MetricName::ServerError
        )
    }

    /// Error and traffic metrics, reported as APM evidence.
    pub const fn is_apm_error(self) -> bool {
        matches!(
            self,
            MetricName::ErrorRatio | MetricName::ClientError | MetricName::ServerError | MetricName::Timeout
        )
    }

    /// Metrics the analyzers run on.
    pub const fn is_key(self) -> bool {
        !matches!(self, MetricName::DiskReadBytes | MetricName::NetworkTransmit)
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown metric name {0:?}")]
pub struct UnknownMetric(pub String);

impl FromStr for MetricName {
    type Err = UnknownMetric;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace([' ', '-', '.'], "_");
        let name = match key.as_str() {
            "cpu_usage" | "cpu" | "cpu_util" | "cpu_utilization" => MetricName::CpuUsage,
            "memory_usage" | "memory" | "mem_usage" | "mem" => MetricName::MemoryUsage,
            "disk_read_bytes" | "disk_read" => MetricName::DiskReadBytes,
            "network_transmit" | "network_transmit_bytes" | "net_tx" => MetricName::NetworkTransmit,
            "request" | "requests" => MetricName::Request,
            "response" | "responses" => MetricName::Response,
            "rrt" | "latency" | "response_time" => MetricName::Rrt,
            "timeout" | "timeouts" => MetricName::Timeout,
            "client_error" | "client_errors" => MetricName::ClientError,
            "server_error" | "server_errors" => MetricName::ServerError,
            "error_ratio" | "error_rate" => MetricName::ErrorRatio,
            _ => return Err(UnknownMetric(s.to_string())),
        };
        Ok(name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub component: String,
    pub node: Option<String>,
    pub metric_name: MetricName,
    /// Instant in the dataset's metric time unit.
    pub timestamp: i64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub component: String,
    pub node: Option<String>,
    /// Instant in the dataset's log time unit.
    pub timestamp: i64,
    pub message: String,
}

/// Time unit of each collection's timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectionUnits {
    pub spans: TimeUnit,
    pub metrics: TimeUnit,
    pub logs: TimeUnit,
}

impl CollectionUnits {
    pub const MICROS: CollectionUnits = CollectionUnits {
        spans: TimeUnit::Microseconds,
        metrics: TimeUnit::Microseconds,
        logs: TimeUnit::Microseconds,
    };
}

impl Default for CollectionUnits {
    fn default() -> Self {
        Self::MICROS
    }
}

/// Raw telemetry for one fault case. Any collection may be empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryDataset {
    pub spans: Vec<SpanRecord>,
    pub metrics: Vec<MetricSample>,
    pub logs: Vec<LogRecord>,
    /// Window the root cause must be localized in.
    pub case_window: TimeWindow,
    /// Window the records were loaded for; contains `case_window`.
    pub context_window: TimeWindow,
    pub units: CollectionUnits,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl TelemetryDataset {
    pub fn empty(window: TimeWindow) -> Self {
        Self {
            spans: Vec::new(),
            metrics: Vec::new(),
            logs: Vec::new(),
            case_window: window,
            context_window: window,
            units: CollectionUnits::MICROS,
            warnings: Vec::new(),
        }
    }

    pub fn record_count(&self) -> usize {
        self.spans.len() + self.metrics.len() + self.logs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.record_count() == 0
    }

    /// Narrows the case window while keeping the loaded context.
    pub fn focus(mut self, case_window: TimeWindow) -> Self {
        self.case_window = case_window;
        if !self.context_window.contains_window(&case_window) {
            let start = self.context_window.start().min(case_window.start());
            let end = self.context_window.end().max(case_window.end());
            self.context_window = TimeWindow::new(start, end).expect("union of windows is non-empty");
        }
        self
    }

    /// Drops records outside `window` in place.
    pub fn retain_window(&mut self, window: &TimeWindow) {
        let units = self.units;
        self.spans.retain(|s| window.contains(s.start_time, units.spans));
        self.metrics.retain(|m| window.contains(m.timestamp, units.metrics));
        self.logs.retain(|l| window.contains(l.timestamp, units.logs));
    }

    /// Drops non-finite metric values, returning how many were removed.
    pub fn drop_non_finite(&mut self) -> usize {
        let before = self.metrics.len();
        self.metrics.retain(|m| m.value.is_finite());
        before - self.metrics.len()
    }
}

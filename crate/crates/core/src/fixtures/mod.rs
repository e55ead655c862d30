//! Seeded synthetic fault scenarios with known root causes.
//!
//! A [`Scenario`] describes a topology, a telemetry span and a set of faults
//! on one target component. [`synthesize`] turns it into a
//! [`TelemetryDataset`]; [`generate_scenario`] also writes the Parquet files,
//! the ground-truth record and a one-case manifest.

mod csv_input;
mod synth;
#[cfg(feature = "parquet")]
mod write;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::component::{ComponentId, ComponentLevel};
use crate::ingest::MetricName;
use crate::time::{parse_instant, TimeWindow};

pub use csv_input::load_csv_dataset;
pub use synth::{erroring_pods, synthesize, Synthesized};
#[cfg(feature = "parquet")]
pub use write::{
    generate_corpus, generate_scenario, write_dataset, GeneratedScenario, LOGS_FILE, NODE_METRICS_FILE,
    POD_METRICS_FILE, TRACES_FILE,
};

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("writing {path}: {detail}")]
    Write { path: std::path::PathBuf, detail: String },
    #[error("{0}")]
    Csv(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, FixtureError> {
    Err(FixtureError::InvalidSpec(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    /// gRPC errors at rate `magnitude` (0, 1].
    ErrorStatus,
    /// RRT pulse peaking at exactly `magnitude` ms.
    RrtSpike,
    /// CPU plateau at `magnitude` percent.
    CpuStress,
    /// A `magnitude` fraction of requests gets no response.
    ReqRespMismatch,
    /// `round(magnitude)` error log lines.
    LogBurst,
    /// Metrics drop to zero and the container restarts.
    PodCrash,
}

impl FaultKind {
    pub const ALL: [FaultKind; 6] = [
        FaultKind::ErrorStatus,
        FaultKind::RrtSpike,
        FaultKind::CpuStress,
        FaultKind::ReqRespMismatch,
        FaultKind::LogBurst,
        FaultKind::PodCrash,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FaultKind::ErrorStatus => "error_status",
            FaultKind::RrtSpike => "rrt_spike",
            FaultKind::CpuStress => "cpu_stress",
            FaultKind::ReqRespMismatch => "req_resp_mismatch",
            FaultKind::LogBurst => "log_burst",
            FaultKind::PodCrash => "pod_crash",
        }
    }

    /// gRPC status attached to spans this fault breaks.
    pub fn grpc_code(self) -> u32 {
        match self {
            FaultKind::ErrorStatus | FaultKind::PodCrash => 14,
            FaultKind::RrtSpike | FaultKind::CpuStress => 4,
            FaultKind::ReqRespMismatch => 13,
            FaultKind::LogBurst => 2,
        }
    }

    fn description(self) -> &'static str {
        match self {
            FaultKind::ErrorStatus => "gRPC calls fail with status UNAVAILABLE",
            FaultKind::RrtSpike => "response timeout with RRT spike",
            FaultKind::CpuStress => "CPU stress",
            FaultKind::ReqRespMismatch => "requests left without responses",
            FaultKind::LogBurst => "burst of error logs",
            FaultKind::PodCrash => "container crash and restart",
        }
    }

    fn key_metrics(self, visible: bool) -> Vec<MetricName> {
        match self {
            FaultKind::ErrorStatus if visible => vec![],
            FaultKind::ErrorStatus => vec![MetricName::ServerError, MetricName::ErrorRatio],
            FaultKind::RrtSpike => vec![MetricName::Rrt, MetricName::Timeout],
            FaultKind::CpuStress => vec![MetricName::CpuUsage],
            FaultKind::ReqRespMismatch => vec![MetricName::Request, MetricName::Response, MetricName::ErrorRatio],
            FaultKind::LogBurst => vec![],
            FaultKind::PodCrash => vec![MetricName::CpuUsage, MetricName::MemoryUsage, MetricName::Request],
        }
    }
}

impl std::fmt::Display for FaultKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    /// The faulty component; its level is the fault level.
    pub target: ComponentId,
    pub kind: FaultKind,
    pub window: TimeWindow,
    pub magnitude: f64,
    /// Whether broken calls surface as non-OK gRPC status codes.
    #[serde(default = "yes")]
    pub grpc_visible: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceSpec {
    pub name: String,
    pub replicas: usize,
}

/// Services, their replica counts, the nodes pods are spread over and the
/// caller → callee edges traces follow. The first service is the entry point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub services: Vec<ServiceSpec>,
    pub nodes: Vec<String>,
    pub calls: Vec<(String, String)>,
}

impl Default for TopologySpec {
    fn default() -> Self {
        let svc = |name: &str, replicas| ServiceSpec {
            name: name.into(),
            replicas,
        };
        let services = vec![
            svc("frontend", 3),
            svc("cartservice", 3),
            svc("productcatalogservice", 3),
            svc("recommendationservice", 3),
            svc("checkoutservice", 3),
            svc("currencyservice", 3),
            svc("paymentservice", 3),
            svc("shippingservice", 3),
            svc("emailservice", 3),
            svc("adservice", 3),
            svc("redis-cart", 1),
            svc("tidb-tidb", 1),
            svc("tidb-pd", 1),
            svc("tidb-tikv", 1),
        ];
        let calls = [
            ("frontend", "cartservice"),
            ("frontend", "productcatalogservice"),
            ("frontend", "recommendationservice"),
            ("frontend", "checkoutservice"),
            ("frontend", "currencyservice"),
            ("frontend", "adservice"),
            ("frontend", "shippingservice"),
            ("recommendationservice", "productcatalogservice"),
            ("checkoutservice", "cartservice"),
            ("checkoutservice", "productcatalogservice"),
            ("checkoutservice", "currencyservice"),
            ("checkoutservice", "shippingservice"),
            ("checkoutservice", "paymentservice"),
            ("checkoutservice", "emailservice"),
            ("cartservice", "redis-cart"),
            ("productcatalogservice", "tidb-tidb"),
            ("tidb-tidb", "tidb-pd"),
            ("tidb-tidb", "tidb-tikv"),
        ]
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .to_vec();
        Self {
            services,
            nodes: (1..=8).map(|i| format!("aiops-k8s-{i:02}")).collect(),
            calls,
        }
    }
}

impl TopologySpec {
    pub fn pods_of(&self, service: &str) -> Vec<String> {
        self.services
            .iter()
            .find(|s| s.name == service)
            .map(|s| (0..s.replicas).map(|i| format!("{}-{i}", s.name)).collect())
            .unwrap_or_default()
    }

    /// Every pod in service order.
    pub fn pods(&self) -> Vec<String> {
        self.services.iter().flat_map(|s| self.pods_of(&s.name)).collect()
    }

    /// Pod → node, round-robin over the nodes in pod order.
    pub fn placement(&self) -> BTreeMap<String, String> {
        self.pods()
            .into_iter()
            .enumerate()
            .map(|(i, p)| (p, self.nodes[i % self.nodes.len()].clone()))
            .collect()
    }

    pub fn pods_on(&self, node: &str) -> Vec<String> {
        self.placement()
            .into_iter()
            .filter(|(_, n)| n == node)
            .map(|(p, _)| p)
            .collect()
    }

    pub fn callees(&self, service: &str) -> Vec<&str> {
        self.calls
            .iter()
            .filter(|(a, _)| a == service)
            .map(|(_, b)| b.as_str())
            .collect()
    }

    /// Pods a fault on `target` touches.
    pub fn affected_pods(&self, target: &ComponentId) -> Vec<String> {
        match target.level {
            ComponentLevel::Service => self.pods_of(&target.name),
            ComponentLevel::Pod => vec![target.name.clone()],
            ComponentLevel::Node => self.pods_on(&target.name),
        }
    }

    pub fn contains(&self, target: &ComponentId) -> bool {
        match target.level {
            ComponentLevel::Service => self.services.iter().any(|s| s.name == target.name),
            ComponentLevel::Pod => self.pods().contains(&target.name),
            ComponentLevel::Node => self.nodes.contains(&target.name),
        }
    }

    pub fn validate(&self) -> Result<(), FixtureError> {
        if self.services.is_empty() || self.nodes.is_empty() {
            return invalid("topology needs at least one service and one node");
        }
        let mut names = BTreeSet::new();
        for s in &self.services {
            if s.replicas == 0 {
                return invalid(format!("service {} has no replicas", s.name));
            }
            let ordinal = s
                .name
                .rsplit_once('-')
                .is_some_and(|(_, n)| n.bytes().all(|b| b.is_ascii_digit()));
            if s.name.is_empty() || ordinal || !s.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-') {
                return invalid(format!(
                    "service name {:?} must be an identifier without a numeric suffix",
                    s.name
                ));
            }
            if !names.insert(s.name.as_str()) {
                return invalid(format!("service {} listed twice", s.name));
            }
        }
        let pods: BTreeSet<String> = self.pods().into_iter().collect();
        for n in &self.nodes {
            if names.contains(n.as_str()) || pods.contains(n) {
                return invalid(format!("node name {n} collides with a service or pod"));
            }
        }
        for (a, b) in &self.calls {
            if !names.contains(a.as_str()) || !names.contains(b.as_str()) {
                return invalid(format!("call {a} -> {b} names an unknown service"));
            }
        }
        // the call graph must be acyclic
        let mut state: BTreeMap<&str, u8> = BTreeMap::new();
        fn visit<'a>(t: &'a TopologySpec, s: &'a str, state: &mut BTreeMap<&'a str, u8>) -> bool {
            match state.get(s) {
                Some(1) => return false,
                Some(2) => return true,
                _ => {}
            }
            state.insert(s, 1);
            for c in t.callees(s) {
                if !visit(t, c, state) {
                    return false;
                }
            }
            state.insert(s, 2);
            true
        }
        for s in &self.services {
            if !visit(self, &s.name, &mut state) {
                return invalid("call graph has a cycle");
            }
        }
        Ok(())
    }
}

/// The labeled root cause of a scenario.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub component: String,
    pub level: ComponentLevel,
    pub fault_description: Vec<String>,
    pub key_metrics: Vec<MetricName>,
}

impl GroundTruth {
    pub fn id(&self) -> ComponentId {
        ComponentId {
            name: self.component.clone(),
            level: self.level,
        }
    }
}

fn default_trace_interval() -> u32 {
    4
}
fn default_metric_interval() -> u32 {
    30
}
fn default_log_interval() -> u32 {
    60
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub seed: u64,
    #[serde(default)]
    pub topology: TopologySpec,
    /// Time range the telemetry covers.
    pub span: TimeWindow,
    /// The question window handed to the pipeline.
    pub case_window: TimeWindow,
    pub faults: Vec<FaultSpec>,
    /// Filled from the faults when absent.
    #[serde(default)]
    pub ground_truth: Option<GroundTruth>,
    /// Whether a failing call also fails its callers.
    #[serde(default)]
    pub error_propagation: bool,
    #[serde(default = "default_trace_interval")]
    pub trace_interval_secs: u32,
    #[serde(default = "default_metric_interval")]
    pub metric_interval_secs: u32,
    #[serde(default = "default_log_interval")]
    pub log_interval_secs: u32,
}

impl Scenario {
    pub fn new(
        id: impl Into<String>,
        seed: u64,
        span: TimeWindow,
        case_window: TimeWindow,
        faults: Vec<FaultSpec>,
    ) -> Self {
        let mut s = Self {
            id: id.into(),
            seed,
            topology: TopologySpec::default(),
            span,
            case_window,
            faults,
            ground_truth: None,
            error_propagation: false,
            trace_interval_secs: default_trace_interval(),
            metric_interval_secs: default_metric_interval(),
            log_interval_secs: default_log_interval(),
        };
        s.ground_truth = s.derived_truth();
        s
    }

    pub fn target(&self) -> Option<&ComponentId> {
        self.faults.first().map(|f| &f.target)
    }

    /// Whether any fault surfaces in gRPC status codes.
    pub fn grpc_visible(&self) -> bool {
        self.faults
            .iter()
            .any(|f| f.grpc_visible && f.kind != FaultKind::LogBurst)
    }

    fn derived_truth(&self) -> Option<GroundTruth> {
        let target = self.target()?.clone();
        let mut key_metrics = BTreeSet::new();
        let mut fault_description = Vec::new();
        for f in &self.faults {
            key_metrics.extend(f.kind.key_metrics(f.grpc_visible));
            let d = f.kind.description().to_string();
            if !fault_description.contains(&d) {
                fault_description.push(d);
            }
        }
        Some(GroundTruth {
            component: target.name,
            level: target.level,
            fault_description,
            key_metrics: key_metrics.into_iter().collect(),
        })
    }

    /// The explicit ground truth, or the one implied by the faults.
    pub fn truth(&self) -> Option<GroundTruth> {
        self.ground_truth.clone().or_else(|| self.derived_truth())
    }

    pub fn validate(&self) -> Result<(), FixtureError> {
        self.topology.validate()?;
        if self.trace_interval_secs == 0 || self.metric_interval_secs == 0 || self.log_interval_secs == 0 {
            return invalid("intervals must be positive");
        }
        if !self.span.contains_window(&self.case_window) {
            return invalid(format!(
                "case window {} is outside the span {}",
                self.case_window, self.span
            ));
        }
        let Some(target) = self.target() else {
            return invalid("scenario has no faults");
        };
        if !self.topology.contains(target) {
            return invalid(format!("target {target} is not in the topology"));
        }
        if self.topology.affected_pods(target).is_empty() {
            return invalid(format!("target {target} has no pods"));
        }
        for f in &self.faults {
            if &f.target != target {
                return invalid(format!(
                    "faults target both {target} and {}; a scenario has one root cause",
                    f.target
                ));
            }
            if !self.span.contains_window(&f.window) {
                return invalid(format!("fault window {} is outside the span {}", f.window, self.span));
            }
            if !(f.magnitude.is_finite() && f.magnitude > 0.0) {
                return invalid(format!("{} magnitude must be positive", f.kind));
            }
            match f.kind {
                FaultKind::ErrorStatus if f.magnitude > 1.0 => {
                    return invalid("error_status magnitude is a rate in (0, 1]")
                }
                FaultKind::ReqRespMismatch if f.magnitude >= 1.0 => {
                    return invalid("req_resp_mismatch magnitude must be below 1")
                }
                FaultKind::CpuStress if f.magnitude > 100.0 => return invalid("cpu_stress magnitude is a percentage"),
                _ => {}
            }
            // the baseline of every hour bucket must outweigh the fault
            let mut hour = self.span.start().div_euclid(3600) * 3600;
            while hour < f.window.end() {
                let bucket = TimeWindow::new(hour, hour + 3600).expect("hour");
                let covered = overlap(&bucket, &self.span);
                let faulty = overlap(&bucket, &f.window);
                if faulty > 0 && 2 * faulty >= covered {
                    return invalid(format!(
                        "fault window {} covers half or more of the telemetry in its hour",
                        f.window
                    ));
                }
                hour += 3600;
            }
        }
        if let Some(gt) = &self.ground_truth {
            if &gt.id() != target {
                return invalid(format!(
                    "ground truth {} differs from the fault target {target}",
                    gt.id()
                ));
            }
        }
        Ok(())
    }
}

fn overlap(a: &TimeWindow, b: &TimeWindow) -> i64 {
    (a.end().min(b.end()) - a.start().max(b.start())).max(0)
}

fn window(start: &str, end: &str) -> TimeWindow {
    TimeWindow::new(
        parse_instant(start).expect("literal"),
        parse_instant(end).expect("literal"),
    )
    .expect("literal")
}

/// The worked cartservice case: all three pods return gRPC errors, RRT spikes
/// to 97,246 ms, 40 error lines are logged and 23.12% of requests fail.
pub fn reference_case_scenario() -> Scenario {
    let target = ComponentId::service("cartservice");
    let fault_window = window("2025-06-05T18:10:05Z", "2025-06-05T18:20:05Z");
    let fault = |kind, magnitude, grpc_visible| FaultSpec {
        target: target.clone(),
        kind,
        window: fault_window,
        magnitude,
        grpc_visible,
    };
    Scenario::new(
        "cartservice-2025-06-05",
        20250605,
        window("2025-06-05T18:00:00Z", "2025-06-05T19:00:00Z"),
        window("2025-06-05T18:10:05Z", "2025-06-05T18:34:05Z"),
        vec![
            fault(FaultKind::ErrorStatus, 0.5, true),
            fault(FaultKind::RrtSpike, 97_246.0, false),
            fault(FaultKind::LogBurst, 40.0, false),
            fault(FaultKind::ReqRespMismatch, 0.2312, false),
        ],
    )
}

/// Corpus slices; each one hides a different modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseCategory {
    /// gRPC-visible faults that also move metrics.
    VisibleWithMetrics,
    /// gRPC-visible error faults seen only in traces and logs.
    VisibleTraceOnly,
    /// Faults seen only in metrics and logs.
    MetricsOnly,
}

impl CaseCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            CaseCategory::VisibleWithMetrics => "visible_with_metrics",
            CaseCategory::VisibleTraceOnly => "visible_trace_only",
            CaseCategory::MetricsOnly => "metrics_only",
        }
    }
}

/// Category of a corpus scenario, read back from its faults.
pub fn category_of(s: &Scenario) -> CaseCategory {
    let visible = s.grpc_visible();
    let metric_kinds = s
        .faults
        .iter()
        .any(|f| !matches!(f.kind, FaultKind::LogBurst) && !(f.kind == FaultKind::ErrorStatus && f.grpc_visible));
    match (visible, metric_kinds) {
        (true, true) => CaseCategory::VisibleWithMetrics,
        (true, false) => CaseCategory::VisibleTraceOnly,
        (false, _) => CaseCategory::MetricsOnly,
    }
}

/// `count` scenarios: 40% visible with metric signatures, 35% visible through
/// traces and logs only, 25% metrics and logs only (including node faults).
pub fn corpus(seed: u64, count: usize) -> Vec<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topo = TopologySpec::default();
    let day = parse_instant("2025-06-05T00:00:00Z").expect("literal");

    let n_a = count * 40 / 100;
    let n_b = count * 35 / 100;
    let mut categories: Vec<CaseCategory> = (0..count)
        .map(|i| {
            if i < n_a {
                CaseCategory::VisibleWithMetrics
            } else if i < n_a + n_b {
                CaseCategory::VisibleTraceOnly
            } else {
                CaseCategory::MetricsOnly
            }
        })
        .collect();
    // Fisher-Yates so categories interleave
    for i in (1..categories.len()).rev() {
        let j = rng.random_range(0..=i);
        categories.swap(i, j);
    }

    let replicated: Vec<&str> = topo
        .services
        .iter()
        .filter(|s| s.replicas > 1)
        .map(|s| s.name.as_str())
        .collect();
    let pods = topo.pods();

    categories
        .into_iter()
        .enumerate()
        .map(|(i, category)| {
            let hour = day + i as i64 * 3600;
            let span = TimeWindow::new(hour, hour + 3600).expect("hour");
            let case_start = hour + 300 + 5 * rng.random_range(0..=240i64);
            let case_window = TimeWindow::new(case_start, case_start + 1440).expect("case");
            let fault_start = case_start + 5 * rng.random_range(0..=24i64);
            let fault_window =
                TimeWindow::new(fault_start, fault_start + 60 * rng.random_range(6..=10i64)).expect("fault");

            let level_roll: f64 = rng.random();
            let target = match category {
                CaseCategory::MetricsOnly if level_roll < 0.4 => {
                    ComponentId::node(topo.nodes[rng.random_range(0..topo.nodes.len())].clone())
                }
                _ if level_roll < 0.55 => ComponentId::pod(pods[rng.random_range(0..pods.len())].clone()),
                _ => ComponentId::service(replicated[rng.random_range(0..replicated.len())]),
            };
            let fault = |kind, magnitude, grpc_visible| FaultSpec {
                target: target.clone(),
                kind,
                window: fault_window,
                magnitude,
                grpc_visible,
            };
            let mut faults = Vec::new();
            match category {
                CaseCategory::VisibleWithMetrics => {
                    let kinds = [
                        FaultKind::RrtSpike,
                        FaultKind::CpuStress,
                        FaultKind::ReqRespMismatch,
                        FaultKind::PodCrash,
                    ];
                    let kind = kinds[rng.random_range(0..kinds.len())];
                    faults.push(fault(kind, magnitude_for(kind, &mut rng), true));
                    if rng.random_bool(0.5) {
                        faults.push(fault(FaultKind::LogBurst, rng.random_range(10..=60) as f64, false));
                    }
                }
                CaseCategory::VisibleTraceOnly => {
                    faults.push(fault(FaultKind::ErrorStatus, rng.random_range(0.3..0.8), true));
                    faults.push(fault(FaultKind::LogBurst, rng.random_range(10..=60) as f64, false));
                }
                CaseCategory::MetricsOnly => {
                    let kinds: &[FaultKind] = if target.level == ComponentLevel::Node {
                        &[FaultKind::CpuStress, FaultKind::PodCrash]
                    } else {
                        &[
                            FaultKind::RrtSpike,
                            FaultKind::CpuStress,
                            FaultKind::ReqRespMismatch,
                            FaultKind::PodCrash,
                            FaultKind::ErrorStatus,
                        ]
                    };
                    let kind = kinds[rng.random_range(0..kinds.len())];
                    faults.push(fault(kind, magnitude_for(kind, &mut rng), false));
                    if rng.random_bool(0.5) {
                        faults.push(fault(FaultKind::LogBurst, rng.random_range(10..=60) as f64, false));
                    }
                }
            }
            let mut s = Scenario::new(format!("case-{i:03}"), rng.random(), span, case_window, faults);
            s.error_propagation = rng.random_bool(0.5);
            s
        })
        .collect()
}

fn magnitude_for(kind: FaultKind, rng: &mut ChaCha8Rng) -> f64 {
    match kind {
        FaultKind::ErrorStatus => rng.random_range(0.2..0.8),
        FaultKind::RrtSpike => rng.random_range(5_000.0..100_000.0f64).round(),
        FaultKind::CpuStress => rng.random_range(80.0..98.0),
        FaultKind::ReqRespMismatch => rng.random_range(0.15..0.6),
        FaultKind::LogBurst => rng.random_range(10..=60) as f64,
        FaultKind::PodCrash => 1.0,
    }
}

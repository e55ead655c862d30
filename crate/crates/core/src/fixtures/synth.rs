//! Telemetry synthesis for one scenario.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{FaultKind, FaultSpec, FixtureError, GroundTruth, Scenario};
use crate::component::{derive_service, ComponentLevel};
use crate::ingest::{CollectionUnits, LogRecord, MetricName, MetricSample, SpanRecord, TelemetryDataset};
use crate::time::TimeUnit;

const MICROS: i64 = 1_000_000;

/// Rate at which non-error faults break calls when they are gRPC-visible.
const VISIBLE_FAULT_RATE: f64 = 0.3;
const CALL_PROBABILITY: f64 = 0.6;

/// A generated dataset with what went into it.
#[derive(Debug, Clone)]
pub struct Synthesized {
    /// Spans and logs in µs, metrics in seconds.
    pub dataset: TelemetryDataset,
    pub truth: GroundTruth,
    /// Error log lines injected per component name.
    pub injected_error_logs: BTreeMap<String, u64>,
}

struct PodProfile {
    cpu: f64,
    mem: f64,
    rrt: f64,
    req: f64,
}

struct NodeProfile {
    cpu: f64,
    mem: f64,
    disk: f64,
    net: f64,
}

fn noise(rng: &mut ChaCha8Rng, half_width: f64) -> f64 {
    rng.random_range(-half_width..=half_width)
}

/// A fault as seen by one pod.
struct Effect<'a> {
    fault: &'a FaultSpec,
    via_node: bool,
}

impl Effect<'_> {
    fn active(&self, t_secs: i64) -> bool {
        t_secs >= self.fault.window.start() && t_secs < self.fault.window.end()
    }
}

/// The metric sample closest to the middle of the fault window.
fn peak_time(f: &FaultSpec, span_start: i64, step: i64) -> i64 {
    let mid = f.window.start() + f.window.duration_secs() / 2;
    let first = span_start + (f.window.start() - span_start + step - 1).div_euclid(step) * step;
    let k = ((mid - first) as f64 / step as f64).round() as i64;
    (first + k.max(0) * step).min(f.window.end() - 1)
}

fn pulse(f: &FaultSpec, peak: i64, t: i64) -> f64 {
    let sigma = f.window.duration_secs() as f64 / 6.0;
    let d = (t - peak) as f64;
    (-d * d / (2.0 * sigma * sigma)).exp()
}

const SAFE_ALPHABET: &[u8] = b"abcdfghjkmnpqrstuvwxyz";

/// Lowercase letters without `e`, so no keyword can appear by chance.
fn token(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len)
        .map(|_| SAFE_ALPHABET[rng.random_range(0..SAFE_ALPHABET.len())] as char)
        .collect()
}

fn baseline_message(rng: &mut ChaCha8Rng, service: &str) -> String {
    match rng.random_range(0..4) {
        0 => format!(
            "GET /{service}/{} 200 served in {}us",
            token(rng, 6),
            rng.random_range(10_000..999_999)
        ),
        1 => format!("handled request for session {}", token(rng, 8)),
        2 => "health check ok".to_string(),
        _ => format!("cache hit ratio 0.{:02}", rng.random_range(50..99)),
    }
}

fn error_message(rng: &mut ChaCha8Rng, service: &str) -> String {
    match rng.random_range(0..4) {
        0 => format!("Error: failed to reach {service} storage: connection refused"),
        1 => "rpc error: code = Unavailable desc = transport is closing".to_string(),
        2 => format!("Exception while handling {service} request: upstream reset"),
        _ => format!("request Timeout waiting for {service} dependency"),
    }
}

pub fn synthesize(s: &Scenario) -> Result<Synthesized, FixtureError> {
    s.validate()?;
    let truth = s.truth().expect("validated scenarios have a target");
    let topo = &s.topology;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let placement = topo.placement();
    let pods = topo.pods();

    let pod_profiles: BTreeMap<&str, PodProfile> = pods
        .iter()
        .map(|p| {
            let prof = PodProfile {
                cpu: rng.random_range(10.0..30.0),
                mem: rng.random_range(30.0..60.0),
                rrt: rng.random_range(50.0..500.0),
                req: rng.random_range(80.0..200.0f64).round(),
            };
            (p.as_str(), prof)
        })
        .collect();
    let node_profiles: BTreeMap<&str, NodeProfile> = topo
        .nodes
        .iter()
        .map(|n| {
            let prof = NodeProfile {
                cpu: rng.random_range(20.0..50.0),
                mem: rng.random_range(40.0..70.0),
                disk: rng.random_range(1e5..5e5),
                net: rng.random_range(1e6..5e6),
            };
            (n.as_str(), prof)
        })
        .collect();

    let mut effects: BTreeMap<&str, Vec<Effect>> = BTreeMap::new();
    for f in &s.faults {
        for pod in topo.affected_pods(&f.target) {
            let pod = pods.iter().find(|p| **p == pod).expect("affected pods exist").as_str();
            effects.entry(pod).or_default().push(Effect {
                fault: f,
                via_node: f.target.level == ComponentLevel::Node,
            });
        }
    }
    // crashes override everything else
    for list in effects.values_mut() {
        list.sort_by_key(|e| e.fault.kind == FaultKind::PodCrash);
    }
    let no_effects = Vec::new();
    let effects_of = |pod: &str| effects.get(pod).unwrap_or(&no_effects);

    let step = s.metric_interval_secs as i64;
    let grid: Vec<i64> = (0..)
        .map(|k| s.span.start() + k * step)
        .take_while(|t| *t < s.span.end())
        .collect();

    let mut metrics = pod_metrics(
        &mut rng,
        s,
        &pods,
        &placement,
        &pod_profiles,
        &node_profiles,
        &effects_of,
        &grid,
    );
    metrics.extend(node_metrics(&mut rng, s, &node_profiles, &grid));

    let spans = traces(&mut rng, s, &placement, &pod_profiles, &effects_of);
    let (logs, injected_error_logs) = logs(&mut rng, s, &pods, &placement);

    let dataset = TelemetryDataset {
        spans,
        metrics,
        logs,
        case_window: s.case_window,
        context_window: s.span,
        units: CollectionUnits {
            spans: TimeUnit::Microseconds,
            metrics: TimeUnit::Seconds,
            logs: TimeUnit::Microseconds,
        },
        warnings: Vec::new(),
    };
    Ok(Synthesized {
        dataset,
        truth,
        injected_error_logs,
    })
}

#[allow(clippy::too_many_arguments)]
fn pod_metrics<'a>(
    rng: &mut ChaCha8Rng,
    s: &Scenario,
    pods: &[String],
    placement: &BTreeMap<String, String>,
    profiles: &BTreeMap<&str, PodProfile>,
    node_profiles: &BTreeMap<&str, NodeProfile>,
    effects_of: &dyn Fn(&str) -> &'a Vec<Effect<'a>>,
    grid: &[i64],
) -> Vec<MetricSample> {
    let step = s.metric_interval_secs as i64;
    let mut out = Vec::with_capacity(pods.len() * grid.len() * 8);
    for pod in pods {
        let prof = &profiles[pod.as_str()];
        let node = placement[pod].clone();
        let node_cpu = node_profiles[node.as_str()].cpu;
        for &t in grid {
            let mut cpu = prof.cpu + noise(rng, 2.0);
            let cpu_noise = cpu - prof.cpu;
            let mut mem = prof.mem + noise(rng, 1.5);
            let mut rrt = prof.rrt + noise(rng, prof.rrt * 0.1);
            let mut req = (prof.req + noise(rng, 10.0)).round();
            let mut resp = req;
            let mut timeout = 0.0;
            let mut client = 0.0;
            let mut server = 0.0;
            for e in effects_of(pod).iter().filter(|e| e.active(t)) {
                let f = e.fault;
                match f.kind {
                    FaultKind::RrtSpike => {
                        let peak = peak_time(f, s.span.start(), step);
                        let p = pulse(f, peak, t);
                        rrt = if t == peak {
                            f.magnitude
                        } else {
                            rrt + (f.magnitude - rrt) * p
                        };
                        timeout = (req * 0.4 * p).round();
                    }
                    // pods share part of their node's rise
                    FaultKind::CpuStress if e.via_node => cpu += 0.3 * (f.magnitude - node_cpu).max(0.0),
                    FaultKind::CpuStress => cpu = (f.magnitude + cpu_noise * 0.5).min(100.0),
                    FaultKind::ReqRespMismatch => {
                        client = req * f.magnitude;
                        resp = req - client;
                    }
                    FaultKind::ErrorStatus if !f.grpc_visible => server = req * f.magnitude,
                    FaultKind::ErrorStatus | FaultKind::LogBurst => {}
                    FaultKind::PodCrash => {
                        (cpu, mem, rrt, req, resp, timeout, client, server) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
                    }
                }
            }
            for (metric_name, value) in [
                (MetricName::CpuUsage, cpu),
                (MetricName::MemoryUsage, mem),
                (MetricName::Rrt, rrt),
                (MetricName::Request, req),
                (MetricName::Response, resp),
                (MetricName::Timeout, timeout),
                (MetricName::ClientError, client),
                (MetricName::ServerError, server),
            ] {
                out.push(MetricSample {
                    component: pod.clone(),
                    node: Some(node.clone()),
                    metric_name,
                    timestamp: t,
                    value,
                });
            }
        }
    }
    out
}

fn node_metrics(
    rng: &mut ChaCha8Rng,
    s: &Scenario,
    profiles: &BTreeMap<&str, NodeProfile>,
    grid: &[i64],
) -> Vec<MetricSample> {
    let mut out = Vec::new();
    for (node, prof) in profiles {
        let faults: Vec<&FaultSpec> = s
            .faults
            .iter()
            .filter(|f| f.target.level == ComponentLevel::Node && f.target.name == *node)
            .collect();
        for &t in grid {
            let cpu_noise = noise(rng, 2.0);
            let mut cpu = prof.cpu + cpu_noise;
            let mut mem = prof.mem + noise(rng, 1.5);
            let mut disk = prof.disk * (1.0 + noise(rng, 0.05));
            let mut net = prof.net * (1.0 + noise(rng, 0.05));
            for f in faults.iter().filter(|f| t >= f.window.start() && t < f.window.end()) {
                match f.kind {
                    FaultKind::CpuStress => cpu = (f.magnitude + cpu_noise * 0.5).min(100.0),
                    FaultKind::PodCrash => (cpu, mem, disk, net) = (0.0, 0.0, 0.0, 0.0),
                    _ => {}
                }
            }
            for (metric_name, value) in [
                (MetricName::CpuUsage, cpu),
                (MetricName::MemoryUsage, mem),
                (MetricName::DiskReadBytes, disk),
                (MetricName::NetworkTransmit, net),
            ] {
                out.push(MetricSample {
                    component: node.to_string(),
                    node: Some(node.to_string()),
                    metric_name,
                    timestamp: t,
                    value,
                });
            }
        }
    }
    out
}

struct TraceGen<'a, 'e> {
    s: &'a Scenario,
    placement: &'a BTreeMap<String, String>,
    profiles: &'a BTreeMap<&'a str, PodProfile>,
    effects_of: &'a dyn Fn(&str) -> &'e Vec<Effect<'e>>,
    spans: Vec<SpanRecord>,
}

impl TraceGen<'_, '_> {
    /// Emits the span for `service` and its callees; returns its status code.
    fn call(&mut self, rng: &mut ChaCha8Rng, trace_id: &str, parent: Option<&str>, service: &str, start: i64) -> u32 {
        let pods = self.s.topology.pods_of(service);
        let pod = pods[rng.random_range(0..pods.len())].clone();
        let span_id = format!("{:016x}", rng.random::<u64>());
        let t_secs = start.div_euclid(MICROS);

        let mut own = 0u32;
        let mut latency_ms = self.profiles[pod.as_str()].rrt * (1.0 + noise(rng, 0.1));
        for e in (self.effects_of)(&pod).iter().filter(|e| e.active(t_secs)) {
            let f = e.fault;
            if f.kind == FaultKind::RrtSpike {
                let peak = peak_time(f, self.s.span.start(), self.s.metric_interval_secs as i64);
                latency_ms += (f.magnitude - latency_ms).max(0.0) * pulse(f, peak, t_secs);
            }
            if f.grpc_visible && f.kind != FaultKind::LogBurst && own == 0 {
                let rate = if f.kind == FaultKind::ErrorStatus {
                    f.magnitude
                } else {
                    VISIBLE_FAULT_RATE
                };
                if rng.random_bool(rate.clamp(0.0, 1.0)) {
                    own = f.kind.grpc_code();
                }
            }
        }

        let index = self.spans.len();
        self.spans.push(SpanRecord {
            trace_id: trace_id.to_string(),
            span_id: span_id.clone(),
            parent_span_id: parent.map(str::to_string),
            service: derive_service(&pod).to_string(),
            pod: pod.clone(),
            start_time: start,
            duration: (latency_ms * 1000.0).round().max(1.0) as i64,
            status_code: None,
            tags: BTreeMap::from([("node_name".to_string(), self.placement[&pod].clone())]),
        });

        let mut child_failure = 0u32;
        let callees: Vec<String> = self
            .s
            .topology
            .callees(service)
            .into_iter()
            .map(str::to_string)
            .collect();
        for (j, callee) in callees.iter().enumerate() {
            if rng.random_bool(CALL_PROBABILITY) {
                let code = self.call(rng, trace_id, Some(&span_id), callee, start + 50 * (j as i64 + 1));
                if child_failure == 0 {
                    child_failure = code;
                }
            }
        }
        let status = if own != 0 {
            own
        } else if self.s.error_propagation {
            child_failure
        } else {
            0
        };
        self.spans[index].status_code = Some(status);
        status
    }
}

fn traces<'e>(
    rng: &mut ChaCha8Rng,
    s: &Scenario,
    placement: &BTreeMap<String, String>,
    profiles: &BTreeMap<&str, PodProfile>,
    effects_of: &dyn Fn(&str) -> &'e Vec<Effect<'e>>,
) -> Vec<SpanRecord> {
    let entry = s.topology.services[0].name.clone();
    let interval = s.trace_interval_secs as i64 * MICROS;
    let mut gen = TraceGen {
        s,
        placement,
        profiles,
        effects_of,
        spans: Vec::new(),
    };
    let mut start = s.span.start_micros();
    while start < s.span.end_micros() {
        let at = (start + rng.random_range(0..interval)).min(s.span.end_micros() - 1_000);
        let trace_id = format!("{:016x}{:016x}", rng.random::<u64>(), rng.random::<u64>());
        gen.call(rng, &trace_id, None, &entry, at);
        start += interval;
    }
    gen.spans.retain(|sp| sp.start_time < s.span.end_micros());
    gen.spans
}

fn logs(
    rng: &mut ChaCha8Rng,
    s: &Scenario,
    pods: &[String],
    placement: &BTreeMap<String, String>,
) -> (Vec<LogRecord>, BTreeMap<String, u64>) {
    let mut out = Vec::new();
    let interval = s.log_interval_secs as i64 * MICROS;
    for pod in pods {
        let service = derive_service(pod);
        let mut t = s.span.start_micros();
        while t < s.span.end_micros() {
            let at = t + rng.random_range(0..interval);
            if at < s.span.end_micros() {
                out.push(LogRecord {
                    component: pod.clone(),
                    node: Some(placement[pod].clone()),
                    timestamp: at,
                    message: baseline_message(rng, service),
                });
            }
            t += interval;
        }
    }

    let mut injected: BTreeMap<String, u64> = BTreeMap::new();
    for f in &s.faults {
        match f.kind {
            FaultKind::LogBurst => {
                let n = f.magnitude.round() as i64;
                let sources: Vec<(String, String)> = match f.target.level {
                    ComponentLevel::Node => vec![(f.target.name.clone(), f.target.name.clone())],
                    _ => s
                        .topology
                        .affected_pods(&f.target)
                        .into_iter()
                        .map(|p| {
                            let node = placement[&p].clone();
                            (p, node)
                        })
                        .collect(),
                };
                let dur = f.window.duration_secs() * MICROS;
                for i in 0..n {
                    let (component, node) = &sources[i as usize % sources.len()];
                    let at = f.window.start_micros() + (2 * i + 1) * dur / (2 * n);
                    out.push(LogRecord {
                        component: component.clone(),
                        node: Some(node.clone()),
                        timestamp: at,
                        message: error_message(rng, derive_service(component)),
                    });
                    *injected.entry(component.clone()).or_insert(0) += 1;
                }
            }
            FaultKind::PodCrash => {
                for pod in s.topology.affected_pods(&f.target) {
                    let mut at = f.window.start_micros() + 30 * MICROS;
                    while at < f.window.end_micros() {
                        out.push(LogRecord {
                            component: pod.clone(),
                            node: Some(placement[&pod].clone()),
                            timestamp: at,
                            message: format!("Back-off restarting failed container {pod}"),
                        });
                        *injected.entry(pod.clone()).or_insert(0) += 1;
                        at += 60 * MICROS;
                    }
                }
            }
            _ => {}
        }
    }
    (out, injected)
}

/// Pods that carry a non-OK status in `spans`.
pub fn erroring_pods(spans: &[SpanRecord]) -> BTreeSet<String> {
    spans
        .iter()
        .filter(|s| s.grpc_status() != 0)
        .map(|s| s.pod.clone())
        .collect()
}

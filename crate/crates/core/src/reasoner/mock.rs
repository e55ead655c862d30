//! Deterministic stand-in for a language model.
//!
//! Names the top bundle's component and narrates its evidence with one step
//! per modality (trace, then metric, then log), plus an APM step when error
//! metrics are among the findings.

use std::collections::BTreeMap;

use super::{Diagnosis, ReasonerError, ReasoningStep};
use crate::component::{derive_service, ComponentLevel};
use crate::fusion::{EvidenceBundle, EvidenceContext};
use crate::ingest::MetricName;
use crate::metric_analysis::{AnomalyKind, MetricSummary};
use crate::time::format_hhmm;

pub fn mock_reason(ctx: &EvidenceContext) -> Result<Diagnosis, ReasonerError> {
    if ctx.is_empty() {
        return Err(ReasonerError::EmptyContext);
    }
    match ctx.top() {
        Some(bundle) => Ok(from_bundle(bundle)),
        None => Ok(from_dump(ctx.raw_dump.as_deref().unwrap_or_default())),
    }
}

fn label(metric: MetricName) -> &'static str {
    match metric {
        MetricName::CpuUsage => "CPU usage",
        MetricName::MemoryUsage => "memory usage",
        MetricName::DiskReadBytes => "disk reads",
        MetricName::NetworkTransmit => "network transmit",
        MetricName::Request => "request count",
        MetricName::Response => "response count",
        MetricName::Rrt => "RRT",
        MetricName::Timeout => "timeouts",
        MetricName::ClientError => "client errors",
        MetricName::ServerError => "server errors",
        MetricName::ErrorRatio => "error ratio",
    }
}

fn amount(metric: MetricName, v: f64) -> String {
    match metric {
        MetricName::CpuUsage | MetricName::MemoryUsage => format!("{v:.1}%"),
        MetricName::Rrt => format!("{v:.0}ms"),
        MetricName::ErrorRatio => format!("{:.2}%", v * 100.0),
        _ => format!("{v:.0}"),
    }
}

fn is_rise(s: &MetricSummary) -> bool {
    matches!(s.kind, AnomalyKind::Threshold | AnomalyKind::ChangePoint) && s.rising()
}

/// Largest peak among rising summaries of `metric`, earliest onset on ties.
fn peak(items: &[MetricSummary], metric: MetricName) -> Option<&MetricSummary> {
    let rising: Vec<&MetricSummary> = items.iter().filter(|s| s.metric_name == metric && is_rise(s)).collect();
    let top = rising.iter().map(|s| s.peak_value).fold(f64::NEG_INFINITY, f64::max);
    rising
        .into_iter()
        .filter(|s| s.peak_value >= top - top.abs() * 1e-9)
        .min_by_key(|s| s.first_timestamp)
}

fn describe(s: &MetricSummary, items: &[MetricSummary]) -> String {
    let m = s.metric_name;
    match s.kind {
        AnomalyKind::Mismatch => format!(
            "request/response mismatch of {:.2}% from {}",
            s.peak_value * 100.0,
            format_hhmm(s.first_timestamp)
        ),
        AnomalyKind::Trend => format!("{} trending {:+.3}{}/min", label(m), s.peak_value, m.unit()),
        _ if m == MetricName::Rrt && is_rise(s) => {
            let p = peak(items, m).unwrap_or(s);
            format!("RRT spike to {:.0}ms at fault time", p.peak_value)
        }
        _ if is_rise(s) => {
            let p = peak(items, m).unwrap_or(s);
            format!(
                "{} rose to {} at {}",
                label(m),
                amount(m, p.peak_value),
                format_hhmm(p.peak_timestamp)
            )
        }
        _ => format!(
            "{} dropped to {} at {}",
            label(m),
            amount(m, s.peak_value),
            format_hhmm(s.first_timestamp)
        ),
    }
}

fn short_ms(v: f64) -> String {
    if v >= 10_000.0 {
        format!("{:.0}k", v / 1000.0)
    } else {
        format!("{v:.0}")
    }
}

fn reason_for(bundle: &EvidenceBundle) -> String {
    let items: &[MetricSummary] = bundle.metric_evidence.as_ref().map_or(&[], |m| &m.items);
    if let Some(p) = peak(items, MetricName::Rrt) {
        return format!("response timeout with RRT spike to {} ms", short_ms(p.peak_value));
    }
    if let Some(p) = peak(items, MetricName::CpuUsage) {
        return format!("CPU stress with usage at {:.1}%", p.peak_value);
    }
    if let Some(a) = items.iter().find(|a| {
        !a.metric_name.is_apm_error() && a.kind != AnomalyKind::Trend && a.kind != AnomalyKind::Mismatch && !is_rise(a)
    }) {
        return format!(
            "pod failure: {} dropped to {}",
            label(a.metric_name),
            amount(a.metric_name, a.peak_value)
        );
    }
    if let Some(p) = peak(items, MetricName::MemoryUsage) {
        return format!("memory pressure with usage at {:.1}%", p.peak_value);
    }
    if let Some(a) = items.iter().find(|a| a.kind == AnomalyKind::Mismatch) {
        return format!(
            "requests not answered: {:.2}% request/response mismatch",
            a.peak_value * 100.0
        );
    }
    if let Some(p) = peak(items, MetricName::ErrorRatio) {
        return format!("elevated error ratio of {:.2}%", p.peak_value * 100.0);
    }
    if let Some(a) = items.first() {
        return format!("abnormal {}", label(a.metric_name));
    }
    if let Some(t) = &bundle.trace_evidence {
        let code = t.status_counts.iter().max_by_key(|(_, n)| *n).map_or(0, |(c, _)| *c);
        return format!("gRPC errors (status {code}) in {} spans", t.error_count);
    }
    if let Some(l) = &bundle.log_evidence {
        return format!("{} error log lines", l.matched);
    }
    "anomalous behaviour".into()
}

fn from_bundle(bundle: &EvidenceBundle) -> Diagnosis {
    let name = bundle.component.name.clone();
    let mut steps: Vec<(String, String)> = Vec::new();

    if let Some(t) = &bundle.trace_evidence {
        let observation = match bundle.component.level {
            ComponentLevel::Service if t.pods.len() > 1 => format!("{} {} pods showing errors", t.pods.len(), name),
            ComponentLevel::Node if t.pods.len() > 1 => format!("{} pods on {} showing errors", t.pods.len(), name),
            _ => format!("{} showing errors in {} spans", t.pods.join(", "), t.error_count),
        };
        steps.push(("TraceAnalysis(Tracedata)".into(), observation));
    }
    let items: &[MetricSummary] = bundle.metric_evidence.as_ref().map_or(&[], |m| &m.items);
    if bundle.metric_evidence.is_some() {
        let primary = items
            .iter()
            .find(|a| !a.metric_name.is_apm_error())
            .or_else(|| items.first());
        let observation = match primary {
            Some(a) => describe(a, items),
            None => "metric anomalies beyond the context budget".to_string(),
        };
        steps.push((format!("MetricsAnalysis({name})"), observation));
    }
    if let Some(l) = &bundle.log_evidence {
        steps.push((
            format!("LogSearch({name})"),
            format!("{} errors detected at faultpeak", l.matched),
        ));
    }
    let apm: Vec<&MetricSummary> = items.iter().filter(|a| a.metric_name.is_apm_error()).collect();
    if !apm.is_empty() {
        let observation = match peak(items, MetricName::ErrorRatio) {
            Some(p) => format!(
                "{:.2}% error ratio at {}",
                p.peak_value * 100.0,
                format_hhmm(p.first_timestamp)
            ),
            None => describe(apm[0], items),
        };
        steps.push((format!("AnalyzeAPM({name})"), observation));
    }

    Diagnosis {
        component: name,
        reason: reason_for(bundle),
        reasoning_trace: steps
            .into_iter()
            .enumerate()
            .map(|(i, (action, observation))| ReasoningStep {
                step: i as u32 + 1,
                action,
                observation,
            })
            .collect(),
    }
}

/// Picks the component named most often in a raw dump.
fn from_dump(dump: &str) -> Diagnosis {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut sections: Vec<&str> = Vec::new();
    for line in dump.lines() {
        let mut fields = line.split_whitespace();
        let (Some(kind), Some(_), Some(third)) = (fields.next(), fields.next(), fields.next()) else {
            continue;
        };
        let component = match kind {
            "span" => fields.next(),
            "metric" | "log" => Some(third),
            _ => None,
        };
        if let Some(c) = component {
            *counts.entry(c).or_insert(0) += 1;
        }
        if !sections.contains(&kind) {
            sections.push(kind);
        }
    }
    let (name, n) = counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(k, v)| (k.to_string(), *v))
        .unwrap_or_else(|| ("unknown".into(), 0));
    let steps = sections
        .iter()
        .map(|s| match *s {
            "span" => (
                "TraceAnalysis(Tracedata)".to_string(),
                format!("{name} appears in many spans"),
            ),
            "metric" => (
                format!("MetricsAnalysis({name})"),
                format!("{name} has the most metric samples"),
            ),
            _ => (format!("LogSearch({name})"), format!("{name} logs most often")),
        })
        .enumerate()
        .map(|(i, (action, observation))| ReasoningStep {
            step: i as u32 + 1,
            action,
            observation,
        })
        .collect::<Vec<_>>();
    let service = derive_service(&name).to_string();
    Diagnosis {
        component: name.clone(),
        reason: format!("{service} dominates the raw telemetry ({n} records)"),
        reasoning_trace: if steps.is_empty() {
            vec![ReasoningStep {
                step: 1,
                action: "Inspect(raw)".into(),
                observation: "no recognizable records".into(),
            }]
        } else {
            steps
        },
    }
}

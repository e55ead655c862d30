//! UTC normalization, per-component aggregation and hourly bucketing.
//!
//! The three steps compose as
//! `sort_and_bucket(aggregate_by_component(to_utc(dataset)))`, available as
//! [`preprocess`]. After `to_utc` every timestamp is microseconds since the
//! epoch. Aggregation groups spans by trace, logs by component and metric
//! samples by `(component, metric)`; pod series are additionally rolled up
//! into service series (counts summed, rates and latencies averaged) and
//! error ratios are derived where only error counts exist. Records whose
//! component cannot be resolved are kept aside with a warning.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::component::{resolve_component, ComponentId, ComponentLevel, Topology};
use crate::ingest::{CollectionUnits, LogRecord, MetricName, MetricSample, SpanRecord, TelemetryDataset};
use crate::time::{TimeUnit, TimeWindow};

/// A time-ordered metric series of one component within one hour bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSeries {
    pub component: ComponentId,
    pub metric_name: MetricName,
    /// `(timestamp µs, value)` pairs.
    pub points: Vec<(i64, f64)>,
    pub bucket: TimeWindow,
    /// Synthesized (service rollup or derived ratio) rather than ingested.
    pub derived: bool,
}

impl ComponentSeries {
    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }

    pub fn time_range(&self) -> Option<(i64, i64)> {
        Some((self.points.first()?.0, self.points.last()?.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessedDataset {
    pub case_window: TimeWindow,
    pub context_window: TimeWindow,
    pub trace_groups: BTreeMap<String, Vec<SpanRecord>>,
    pub metric_series: Vec<ComponentSeries>,
    #[serde(with = "crate::component::keyed")]
    pub log_groups: BTreeMap<ComponentId, Vec<LogRecord>>,
    pub topology: Topology,
    pub unresolved_metrics: Vec<MetricSample>,
    pub unresolved_logs: Vec<LogRecord>,
    pub warnings: Vec<String>,
}

impl PreprocessedDataset {
    /// Ingested records held in groups (derived series excluded).
    pub fn grouped_record_count(&self) -> usize {
        self.trace_groups.values().map(Vec::len).sum::<usize>()
            + self
                .metric_series
                .iter()
                .filter(|s| !s.derived)
                .map(|s| s.points.len())
                .sum::<usize>()
            + self.log_groups.values().map(Vec::len).sum::<usize>()
    }

    pub fn unresolved_record_count(&self) -> usize {
        self.unresolved_metrics.len() + self.unresolved_logs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trace_groups.is_empty() && self.metric_series.is_empty() && self.log_groups.is_empty()
    }

    /// Spans whose start lies inside the case window, still grouped by trace.
    pub fn traces_in_case_window(&self) -> BTreeMap<String, Vec<SpanRecord>> {
        self.trace_groups
            .iter()
            .filter_map(|(id, spans)| {
                let kept: Vec<SpanRecord> = spans
                    .iter()
                    .filter(|s| self.case_window.contains_micros(s.start_time))
                    .cloned()
                    .collect();
                (!kept.is_empty()).then(|| (id.clone(), kept))
            })
            .collect()
    }

    /// Log groups restricted to the case window.
    pub fn logs_in_case_window(&self) -> BTreeMap<ComponentId, Vec<LogRecord>> {
        self.log_groups
            .iter()
            .filter_map(|(c, logs)| {
                let kept: Vec<LogRecord> = logs
                    .iter()
                    .filter(|l| self.case_window.contains_micros(l.timestamp))
                    .cloned()
                    .collect();
                (!kept.is_empty()).then(|| (c.clone(), kept))
            })
            .collect()
    }
}

/// Rescales every timestamp to microseconds. Idempotent.
pub fn to_utc(mut dataset: TelemetryDataset) -> TelemetryDataset {
    let units = dataset.units;
    let target = TimeUnit::Microseconds;
    if units.spans != target {
        for s in &mut dataset.spans {
            s.start_time = units.spans.convert(s.start_time, target);
        }
    }
    if units.metrics != target {
        for m in &mut dataset.metrics {
            m.timestamp = units.metrics.convert(m.timestamp, target);
        }
    }
    if units.logs != target {
        for l in &mut dataset.logs {
            l.timestamp = units.logs.convert(l.timestamp, target);
        }
    }
    dataset.units = CollectionUnits::MICROS;
    dataset
}

/// Groups records per trace, per component and per metric.
pub fn aggregate_by_component(dataset: TelemetryDataset) -> PreprocessedDataset {
    let dataset = to_utc(dataset);
    let mut warnings = dataset.warnings.clone();

    let mut known_nodes: BTreeSet<String> = BTreeSet::new();
    known_nodes.extend(dataset.spans.iter().filter_map(|s| s.node().map(str::to_string)));
    known_nodes.extend(dataset.metrics.iter().filter_map(|m| m.node.clone()));
    known_nodes.extend(dataset.logs.iter().filter_map(|l| l.node.clone()));
    known_nodes.retain(|n| !n.trim().is_empty());

    let mut topology = Topology::default();
    let mut trace_groups: BTreeMap<String, Vec<SpanRecord>> = BTreeMap::new();
    for span in dataset.spans {
        if let Some(ComponentId {
            level: ComponentLevel::Pod,
            name,
        }) = resolve_component(&span.pod, &known_nodes)
        {
            topology.add_pod(&name, span.node());
        }
        trace_groups.entry(span.trace_id.clone()).or_default().push(span);
    }

    let mut direct: BTreeMap<(ComponentId, MetricName), Vec<(i64, f64)>> = BTreeMap::new();
    let mut unresolved_metrics = Vec::new();
    for sample in dataset.metrics {
        match resolve_component(&sample.component, &known_nodes) {
            Some(id) => {
                if id.level == ComponentLevel::Pod {
                    topology.add_pod(&id.name, sample.node.as_deref());
                }
                direct
                    .entry((id, sample.metric_name))
                    .or_default()
                    .push((sample.timestamp, sample.value));
            }
            None => unresolved_metrics.push(sample),
        }
    }

    let mut log_groups: BTreeMap<ComponentId, Vec<LogRecord>> = BTreeMap::new();
    let mut unresolved_logs = Vec::new();
    for log in dataset.logs {
        match resolve_component(&log.component, &known_nodes) {
            Some(id) => {
                if id.level == ComponentLevel::Pod {
                    topology.add_pod(&id.name, log.node.as_deref());
                }
                log_groups.entry(id).or_default().push(log);
            }
            None => unresolved_logs.push(log),
        }
    }
    if !unresolved_metrics.is_empty() || !unresolved_logs.is_empty() {
        let names: BTreeSet<&str> = unresolved_metrics
            .iter()
            .map(|m| m.component.as_str())
            .chain(unresolved_logs.iter().map(|l| l.component.as_str()))
            .collect();
        warnings.push(format!(
            "{} records name unresolvable components: {:?}",
            unresolved_metrics.len() + unresolved_logs.len(),
            names
        ));
    }

    #[allow(clippy::type_complexity)]
    let mut series: BTreeMap<(ComponentId, MetricName), (Vec<(i64, f64)>, bool)> =
        direct.into_iter().map(|(k, v)| (k, (v, false))).collect();
    roll_up_services(&mut series);
    derive_error_ratios(&mut series);

    let metric_series = series
        .into_iter()
        .filter(|(_, (points, _))| !points.is_empty())
        .map(|((component, metric_name), (points, derived))| {
            let lo = points.iter().map(|p| p.0).min().expect("non-empty");
            let hi = points.iter().map(|p| p.0).max().expect("non-empty");
            let first = TimeWindow::hour_of_micros(lo);
            let last = TimeWindow::hour_of_micros(hi);
            ComponentSeries {
                component,
                metric_name,
                points,
                bucket: TimeWindow::new(first.start(), last.end()).expect("hour span"),
                derived,
            }
        })
        .collect();

    PreprocessedDataset {
        case_window: dataset.case_window,
        context_window: dataset.context_window,
        trace_groups,
        metric_series,
        log_groups,
        topology,
        unresolved_metrics,
        unresolved_logs,
        warnings,
    }
}

type SeriesMap = BTreeMap<(ComponentId, MetricName), (Vec<(i64, f64)>, bool)>;

/// Synthesizes service series from pod series where no direct service series exists.
fn roll_up_services(series: &mut SeriesMap) {
    let mut pooled: BTreeMap<(ComponentId, MetricName), BTreeMap<i64, (f64, usize)>> = BTreeMap::new();
    for ((component, metric), (points, _)) in series.iter() {
        let Some(service) = component.parent_service() else {
            continue;
        };
        let slot = pooled.entry((service, *metric)).or_default();
        for &(t, v) in points {
            let e = slot.entry(t).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }
    for ((service, metric), by_time) in pooled {
        if series.contains_key(&(service.clone(), metric)) {
            continue;
        }
        let points = by_time
            .into_iter()
            .map(|(t, (sum, n))| (t, if metric.is_count() { sum } else { sum / n as f64 }))
            .collect();
        series.insert((service, metric), (points, true));
    }
}

/// Adds `error_ratio = (client_error + server_error) / max(request, 1)` where absent.
fn derive_error_ratios(series: &mut SeriesMap) {
    let components: BTreeSet<ComponentId> = series.keys().map(|(c, _)| c.clone()).collect();
    for component in components {
        if series.contains_key(&(component.clone(), MetricName::ErrorRatio)) {
            continue;
        }
        let Some((requests, _)) = series.get(&(component.clone(), MetricName::Request)) else {
            continue;
        };
        let client = series.get(&(component.clone(), MetricName::ClientError));
        let server = series.get(&(component.clone(), MetricName::ServerError));
        if client.is_none() && server.is_none() {
            continue;
        }
        let mut errors: BTreeMap<i64, f64> = BTreeMap::new();
        for (points, _) in [client, server].into_iter().flatten() {
            for &(t, v) in points {
                *errors.entry(t).or_insert(0.0) += v;
            }
        }
        let mut req: BTreeMap<i64, f64> = BTreeMap::new();
        for &(t, v) in requests {
            *req.entry(t).or_insert(0.0) += v;
        }
        let points: Vec<(i64, f64)> = req
            .iter()
            .filter_map(|(t, r)| errors.get(t).map(|e| (*t, e / r.max(1.0))))
            .collect();
        if !points.is_empty() {
            series.insert((component, MetricName::ErrorRatio), (points, true));
        }
    }
}

/// Sorts every group by timestamp (stable) and splits metric series at UTC hour boundaries.
pub fn sort_and_bucket(mut pre: PreprocessedDataset) -> PreprocessedDataset {
    for spans in pre.trace_groups.values_mut() {
        spans.sort_by_key(|s| s.start_time);
    }
    for logs in pre.log_groups.values_mut() {
        logs.sort_by_key(|l| l.timestamp);
    }
    let mut bucketed = Vec::with_capacity(pre.metric_series.len());
    for mut s in pre.metric_series {
        s.points.sort_by_key(|p| p.0);
        let mut current: Option<ComponentSeries> = None;
        for &(t, v) in &s.points {
            let hour = TimeWindow::hour_of_micros(t);
            match current.as_mut() {
                Some(c) if c.bucket == hour => c.points.push((t, v)),
                _ => {
                    if let Some(done) = current.take() {
                        bucketed.push(done);
                    }
                    current = Some(ComponentSeries {
                        component: s.component.clone(),
                        metric_name: s.metric_name,
                        points: vec![(t, v)],
                        bucket: hour,
                        derived: s.derived,
                    });
                }
            }
        }
        bucketed.extend(current);
    }
    bucketed.sort_by(|a, b| (&a.component, a.metric_name, a.bucket).cmp(&(&b.component, b.metric_name, b.bucket)));
    pre.metric_series = bucketed;
    pre
}

/// The full preprocessing chain.
pub fn preprocess(dataset: TelemetryDataset) -> PreprocessedDataset {
    sort_and_bucket(aggregate_by_component(to_utc(dataset)))
}

//! Metric anomaly detectors: robust thresholding, trend slopes,
//! request/response mismatch and PELT change points.
//!
//! Every detector maps its natural score onto `severity`, which fusion uses
//! to rank components:
//!
//! | kind         | severity                                   |
//! |--------------|--------------------------------------------|
//! | threshold    | robust z-score                             |
//! | trend        | `|slope| / threshold`                      |
//! | mismatch     | `|req − resp| / max(req, 1)`               |
//! | change point | segment mean shift in units of noise scale |

mod pelt;
pub mod robust;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use pelt::{noise_sigma, pelt_penalty, pelt_with_penalty, SegmentCost};

use crate::component::ComponentId;
use crate::ingest::MetricName;
use crate::preprocess::{ComponentSeries, PreprocessedDataset};
use crate::time::{format_hhmm, TimeWindow};
use robust::{ls_slope, robust_scores};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("series of {len} points is too short for segments of {min_segment}")]
    SeriesTooShort { len: usize, min_segment: usize },
    #[error("request and response series cover different buckets")]
    MisalignedSeries,
    #[error("invalid detector config: {0}")]
    InvalidConfig(String),
}

/// Per-metric overrides of the global detector settings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricOverrides {
    pub z_threshold: Option<f64>,
    pub trend_slope_threshold: Option<f64>,
    pub pelt_penalty_multiplier: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub z_threshold: f64,
    /// Slope limit in metric units per minute, for metrics without an override.
    pub trend_slope_threshold: f64,
    pub mismatch_ratio_threshold: f64,
    pub pelt_penalty_multiplier: f64,
    pub min_segment_length: usize,
    pub per_metric: BTreeMap<MetricName, MetricOverrides>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        let slope = |s: f64| MetricOverrides {
            trend_slope_threshold: Some(s),
            ..Default::default()
        };
        Self {
            z_threshold: 3.0,
            trend_slope_threshold: 1.0,
            mismatch_ratio_threshold: 0.1,
            pelt_penalty_multiplier: 3.0,
            min_segment_length: 2,
            per_metric: BTreeMap::from([
                (MetricName::CpuUsage, slope(0.5)),
                (MetricName::MemoryUsage, slope(0.5)),
                (MetricName::Rrt, slope(20.0)),
                (MetricName::Request, slope(2.0)),
                (MetricName::Response, slope(2.0)),
                (MetricName::ErrorRatio, slope(0.005)),
            ]),
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), MetricError> {
        let bad = |what: &str| Err(MetricError::InvalidConfig(what.to_string()));
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.z_threshold) {
            return bad("z_threshold must be positive");
        }
        if !positive(self.trend_slope_threshold) {
            return bad("trend_slope_threshold must be positive");
        }
        if !(self.mismatch_ratio_threshold > 0.0 && self.mismatch_ratio_threshold < 1.0) {
            return bad("mismatch_ratio_threshold must lie in (0, 1)");
        }
        if !positive(self.pelt_penalty_multiplier) {
            return bad("pelt_penalty_multiplier must be positive");
        }
        if self.min_segment_length < 2 {
            return bad("min_segment_length must be at least 2");
        }
        for (metric, o) in &self.per_metric {
            for v in [o.z_threshold, o.trend_slope_threshold, o.pelt_penalty_multiplier]
                .into_iter()
                .flatten()
            {
                if !positive(v) {
                    return bad(&format!("override for {metric} must be positive"));
                }
            }
        }
        Ok(())
    }

    /// Settings with the overrides for `metric` applied.
    pub fn for_metric(&self, metric: MetricName) -> DetectorConfig {
        let mut cfg = self.clone();
        if let Some(o) = self.per_metric.get(&metric) {
            cfg.z_threshold = o.z_threshold.unwrap_or(cfg.z_threshold);
            cfg.trend_slope_threshold = o.trend_slope_threshold.unwrap_or(cfg.trend_slope_threshold);
            cfg.pelt_penalty_multiplier = o.pelt_penalty_multiplier.unwrap_or(cfg.pelt_penalty_multiplier);
        }
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    Threshold,
    Trend,
    ChangePoint,
    Mismatch,
}

impl AnomalyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AnomalyKind::Threshold => "threshold",
            AnomalyKind::Trend => "trend",
            AnomalyKind::ChangePoint => "change_point",
            AnomalyKind::Mismatch => "mismatch",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricAnomaly {
    pub component: ComponentId,
    pub metric_name: MetricName,
    pub kind: AnomalyKind,
    /// Microseconds since the epoch.
    pub timestamp: i64,
    pub severity: f64,
    /// The observed value the finding is about (peak, ratio, slope or new level).
    pub value: f64,
    /// What `value` is compared against (median, previous level); zero for ratios and slopes.
    pub baseline: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricAnomalyReport {
    pub anomalies: Vec<MetricAnomaly>,
    #[serde(with = "crate::component::keyed")]
    pub per_component_score: BTreeMap<ComponentId, f64>,
}

impl MetricAnomalyReport {
    /// Builds a report from findings in any order.
    pub fn from_anomalies(mut anomalies: Vec<MetricAnomaly>) -> Self {
        anomalies.sort_by(|a, b| {
            (&a.component, a.metric_name, a.kind, a.timestamp)
                .cmp(&(&b.component, b.metric_name, b.kind, b.timestamp))
                .then(a.severity.total_cmp(&b.severity))
        });
        let mut per_component_score = BTreeMap::new();
        for a in &anomalies {
            *per_component_score.entry(a.component.clone()).or_insert(0.0) += a.severity;
        }
        Self {
            anomalies,
            per_component_score,
        }
    }

    pub fn merge(self, other: MetricAnomalyReport) -> Self {
        let mut all = self.anomalies;
        all.extend(other.anomalies);
        Self::from_anomalies(all)
    }

    pub fn is_empty(&self) -> bool {
        self.anomalies.is_empty()
    }

    pub fn for_component<'a>(&'a self, component: &'a ComponentId) -> impl Iterator<Item = &'a MetricAnomaly> + 'a {
        self.anomalies.iter().filter(move |a| &a.component == component)
    }
}

/// All findings of one kind on one (component, metric) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub component: ComponentId,
    pub metric_name: MetricName,
    pub kind: AnomalyKind,
    pub count: usize,
    /// Earliest finding.
    pub first_timestamp: i64,
    /// The strongest finding (earliest on ties).
    pub peak_timestamp: i64,
    pub peak_value: f64,
    pub baseline: f64,
    pub max_severity: f64,
    pub severity_sum: f64,
}

impl MetricSummary {
    pub fn rising(&self) -> bool {
        self.peak_value > self.baseline
    }

    pub fn describe(&self) -> String {
        let m = self.metric_name;
        let head = format!(
            "{} {} {} x{} from {}",
            self.component.name,
            m,
            self.kind.as_str(),
            self.count,
            format_hhmm(self.first_timestamp)
        );
        let body = match self.kind {
            AnomalyKind::Trend => format!("slope {:+.4}{}/min", self.peak_value, m.unit()),
            AnomalyKind::Mismatch => format!(
                "peak mismatch {:.2}% at {}",
                self.peak_value * 100.0,
                format_hhmm(self.peak_timestamp)
            ),
            _ => format!(
                "peak {} at {} vs baseline {}",
                fmt_value(m, self.peak_value),
                format_hhmm(self.peak_timestamp),
                fmt_value(m, self.baseline)
            ),
        };
        format!(
            "{head}: {body} (max severity {:.2}, total {:.2})",
            self.max_severity, self.severity_sum
        )
    }
}

/// Groups findings by (component, metric, kind), strongest group first.
pub fn summarize(anomalies: &[MetricAnomaly]) -> Vec<MetricSummary> {
    let mut groups: BTreeMap<(&ComponentId, MetricName, AnomalyKind), Vec<&MetricAnomaly>> = BTreeMap::new();
    for a in anomalies {
        groups.entry((&a.component, a.metric_name, a.kind)).or_default().push(a);
    }
    let mut out: Vec<MetricSummary> = groups
        .into_iter()
        .map(|((component, metric_name, kind), mut items)| {
            items.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then(b.severity.total_cmp(&a.severity)));
            let peak = items
                .iter()
                .copied()
                .reduce(|best, a| if a.severity > best.severity { a } else { best })
                .expect("group is non-empty");
            MetricSummary {
                component: component.clone(),
                metric_name,
                kind,
                count: items.len(),
                first_timestamp: items[0].timestamp,
                peak_timestamp: peak.timestamp,
                peak_value: peak.value,
                baseline: peak.baseline,
                max_severity: peak.severity,
                severity_sum: items.iter().map(|a| a.severity).sum(),
            }
        })
        .collect();
    sort_summaries(&mut out);
    out
}

/// Severity total descending, then component, metric and kind.
pub fn sort_summaries(items: &mut [MetricSummary]) {
    items.sort_by(|a, b| {
        b.severity_sum
            .total_cmp(&a.severity_sum)
            .then((&a.component, a.metric_name, a.kind).cmp(&(&b.component, b.metric_name, b.kind)))
    });
}

fn fmt_value(metric: MetricName, v: f64) -> String {
    let unit = metric.unit();
    if v.abs() >= 100.0 || v == v.trunc() {
        format!("{v:.0}{unit}")
    } else {
        format!("{v:.4}{unit}")
    }
}

/// Points whose robust z-score exceeds `cfg.z_threshold`. With a zero MAD
/// every point off the median is flagged.
pub fn detect_threshold_anomalies(series: &ComponentSeries, cfg: &DetectorConfig) -> Vec<MetricAnomaly> {
    if series.points.len() < 4 {
        return Vec::new();
    }
    let scores = robust_scores(&series.values());
    let med = scores.median;
    let mut out = Vec::new();
    for (i, &(t, x)) in series.points.iter().enumerate() {
        if !scores.flagged(i, cfg.z_threshold) {
            continue;
        }
        let z = scores.z[i];
        out.push(MetricAnomaly {
            component: series.component.clone(),
            metric_name: series.metric_name,
            kind: AnomalyKind::Threshold,
            timestamp: t,
            severity: z,
            value: x,
            baseline: med,
            detail: format!(
                "{} {} at {} vs median {} (robust z {z:.1})",
                series.metric_name,
                fmt_value(series.metric_name, x),
                format_hhmm(t),
                fmt_value(series.metric_name, med)
            ),
        });
    }
    out
}

/// Least-squares slope per minute over the whole series; one finding when it
/// exceeds the metric's slope threshold.
pub fn detect_trend_anomalies(series: &ComponentSeries, cfg: &DetectorConfig) -> Vec<MetricAnomaly> {
    if series.points.len() < 5 {
        return Vec::new();
    }
    let t0 = series.points[0].0;
    let pts: Vec<(f64, f64)> = series
        .points
        .iter()
        .map(|&(t, v)| ((t - t0) as f64 / 60_000_000.0, v))
        .collect();
    let Some(slope) = ls_slope(&pts) else {
        return Vec::new();
    };
    let threshold = cfg.trend_slope_threshold;
    if slope.abs() <= threshold {
        return Vec::new();
    }
    let t_end = series.points.last().expect("non-empty").0;
    vec![MetricAnomaly {
        component: series.component.clone(),
        metric_name: series.metric_name,
        kind: AnomalyKind::Trend,
        timestamp: t_end,
        severity: slope.abs() / threshold,
        value: slope,
        baseline: 0.0,
        detail: format!(
            "{} trending {slope:+.4}{}/min over {}",
            series.metric_name,
            series.metric_name.unit(),
            series.bucket
        ),
    }]
}

/// Points where requests and responses diverge by more than the ratio threshold.
pub fn detect_mismatch(
    requests: &ComponentSeries,
    responses: &ComponentSeries,
    cfg: &DetectorConfig,
) -> Result<Vec<MetricAnomaly>, MetricError> {
    if requests.bucket != responses.bucket {
        return Err(MetricError::MisalignedSeries);
    }
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    let (req, resp) = (&requests.points, &responses.points);
    while i < req.len() && j < resp.len() {
        let (tq, q) = req[i];
        let (tr, r) = resp[j];
        if tq < tr {
            i += 1;
            continue;
        }
        if tr < tq {
            j += 1;
            continue;
        }
        let ratio = (q - r).abs() / q.max(1.0);
        if ratio > cfg.mismatch_ratio_threshold {
            out.push(MetricAnomaly {
                component: requests.component.clone(),
                metric_name: MetricName::Response,
                kind: AnomalyKind::Mismatch,
                timestamp: tq,
                severity: ratio,
                value: ratio,
                baseline: 0.0,
                detail: format!(
                    "request {q:.0} vs response {r:.0} at {} ({:.2}% mismatch)",
                    format_hhmm(tq),
                    ratio * 100.0
                ),
            });
        }
        i += 1;
        j += 1;
    }
    Ok(out)
}

/// Change-point indices for `values` under the configured penalty.
pub fn pelt_change_points(values: &[f64], cfg: &DetectorConfig) -> Result<Vec<usize>, MetricError> {
    let m = cfg.min_segment_length;
    if values.len() < 2 * m {
        return Err(MetricError::SeriesTooShort {
            len: values.len(),
            min_segment: m,
        });
    }
    let penalty = pelt_penalty(values, cfg.pelt_penalty_multiplier);
    Ok(pelt_with_penalty(values, penalty, m))
}

fn change_point_anomalies(series: &ComponentSeries, cfg: &DetectorConfig) -> Result<Vec<MetricAnomaly>, MetricError> {
    let values = series.values();
    let cps = pelt_change_points(&values, cfg)?;
    if cps.is_empty() {
        return Ok(Vec::new());
    }
    let sigma = noise_sigma(&values);
    let cost = SegmentCost::new(&values);
    let mut bounds = vec![0];
    bounds.extend(&cps);
    bounds.push(values.len());
    let mut out = Vec::new();
    for k in 1..bounds.len() - 1 {
        let before = cost.mean(bounds[k - 1], bounds[k]);
        let after = cost.mean(bounds[k], bounds[k + 1]);
        let severity = (after - before).abs() / sigma;
        if severity.is_nan() || severity <= 0.0 {
            continue;
        }
        let t = series.points[bounds[k]].0;
        out.push(MetricAnomaly {
            component: series.component.clone(),
            metric_name: series.metric_name,
            kind: AnomalyKind::ChangePoint,
            timestamp: t,
            severity,
            value: after,
            baseline: before,
            detail: format!(
                "{} level shift at {}: mean {} -> {}",
                series.metric_name,
                format_hhmm(t),
                fmt_value(series.metric_name, before),
                fmt_value(series.metric_name, after)
            ),
        });
    }
    Ok(out)
}

fn analyze_series(series: &ComponentSeries, cfg: &DetectorConfig, window: &TimeWindow) -> Vec<MetricAnomaly> {
    let cfg = cfg.for_metric(series.metric_name);
    let mut found = detect_threshold_anomalies(series, &cfg);
    match change_point_anomalies(series, &cfg) {
        Ok(cps) => found.extend(cps),
        Err(e) => {
            tracing::debug!(component = %series.component, metric = %series.metric_name, "change points skipped: {e}")
        }
    }
    found.retain(|a| window.contains_micros(a.timestamp));
    for mut trend in detect_trend_anomalies(series, &cfg) {
        trend.timestamp = window.clamp_micros(trend.timestamp);
        found.push(trend);
    }
    found
}

/// Runs every detector over the key-metric series that overlap the case
/// window. Findings are restricted to the case window; the rest of each
/// series serves as baseline.
pub fn analyze_metrics(pre: &PreprocessedDataset, cfg: &DetectorConfig) -> MetricAnomalyReport {
    let window = pre.case_window;
    let relevant: Vec<&ComponentSeries> = pre
        .metric_series
        .iter()
        .filter(|s| s.metric_name.is_key())
        .filter(|s| {
            s.time_range()
                .is_some_and(|(lo, hi)| lo < window.end_micros() && hi >= window.start_micros())
        })
        .collect();

    let mut anomalies: Vec<MetricAnomaly> = relevant
        .par_iter()
        .flat_map_iter(|s| analyze_series(s, cfg, &window))
        .collect();

    let responses: BTreeMap<(&ComponentId, TimeWindow), &ComponentSeries> = relevant
        .iter()
        .filter(|s| s.metric_name == MetricName::Response)
        .map(|s| ((&s.component, s.bucket), *s))
        .collect();
    for req in relevant.iter().filter(|s| s.metric_name == MetricName::Request) {
        let Some(resp) = responses.get(&(&req.component, req.bucket)) else {
            continue;
        };
        match detect_mismatch(req, resp, cfg) {
            Ok(found) => anomalies.extend(found.into_iter().filter(|a| window.contains_micros(a.timestamp))),
            Err(e) => tracing::debug!(component = %req.component, "mismatch skipped: {e}"),
        }
    }
    MetricAnomalyReport::from_anomalies(anomalies)
}

//! Residual fusion of trace, metric and log findings into per-component
//! evidence bundles.
//!
//! Fusion runs level by level. Trace candidates anchor bundles first; metric
//! findings then attach to anchored components, and components that only
//! have metric findings open new bundles instead of being discarded; logs
//! are added the same way. The other strategies restrict which level may
//! open bundles: `early` only metrics, `intermediate` only traces, and
//! `original` skips analysis and hands over a raw record dump.
//!
//! After anchoring, a service or node bundle absorbs its pods' bundles when
//! every one of its (two or more) pods has one, so a fault that shows up on
//! all replicas is reported once at the level it lives on.
//!
//! Bundle score is `w_t · error spans + w_m · metric severity + w_l · retained
//! log lines`, and the context keeps the `top_k` best bundles.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::component::{derive_service, ComponentId, ComponentLevel, Topology};
use crate::log_analysis::{LogAnomalyReport, LogEntry};
use crate::metric_analysis::{sort_summaries, summarize, MetricAnomaly, MetricAnomalyReport, MetricSummary};
use crate::preprocess::PreprocessedDataset;
use crate::time::{format_hhmm, format_micros, format_secs, TimeWindow};
use crate::trace_analysis::{PropagationPath, TraceAnomalyReport};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FusionError {
    #[error("no anomaly evidence for the case window")]
    NoEvidence,
    #[error("invalid fusion config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Original,
    Early,
    Intermediate,
    Final,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Original,
        Strategy::Early,
        Strategy::Intermediate,
        Strategy::Final,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Original => "original",
            Strategy::Early => "early",
            Strategy::Intermediate => "intermediate",
            Strategy::Final => "final",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown strategy {s:?} (expected original, early, intermediate or final)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub weight_trace: f64,
    pub weight_metric: f64,
    pub weight_log: f64,
    pub top_k: usize,
    pub max_context_chars: usize,
    pub strategy: Strategy,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            weight_trace: 3.0,
            weight_metric: 2.0,
            weight_log: 1.0,
            top_k: 5,
            max_context_chars: 12_000,
            strategy: Strategy::Final,
        }
    }
}

/// Smallest budget that still fits the context header and one bundle skeleton.
pub const MIN_CONTEXT_CHARS: usize = 1_000;

impl FusionConfig {
    pub fn validate(&self) -> Result<(), FusionError> {
        for (name, w) in [
            ("weight_trace", self.weight_trace),
            ("weight_metric", self.weight_metric),
            ("weight_log", self.weight_log),
        ] {
            if !(w.is_finite() && w > 0.0) {
                return Err(FusionError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.top_k == 0 {
            return Err(FusionError::InvalidConfig("top_k must be at least 1".into()));
        }
        if self.max_context_chars < MIN_CONTEXT_CHARS {
            return Err(FusionError::InvalidConfig(format!(
                "max_context_chars must be at least {MIN_CONTEXT_CHARS}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvidence {
    pub error_count: u64,
    pub status_counts: Vec<(u32, u64)>,
    /// Pods whose spans were error leaves.
    pub pods: Vec<String>,
    pub paths: Vec<PropagationPath>,
    pub omitted_paths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEvidence {
    pub severity_sum: f64,
    pub anomaly_count: usize,
    /// One summary per (component, metric, kind), strongest first.
    pub items: Vec<MetricSummary>,
    pub omitted: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogItem {
    pub component: String,
    #[serde(flatten)]
    pub entry: LogEntry,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEvidence {
    /// All matching lines, including those past the analyzer's cap.
    pub matched: u64,
    /// Lines the analyzer kept; this is what the score counts.
    pub retained: u64,
    pub items: Vec<LogItem>,
    pub omitted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceBundle {
    pub component: ComponentId,
    /// Pods whose bundles were folded into this one.
    pub members: Vec<ComponentId>,
    pub trace_evidence: Option<TraceEvidence>,
    pub metric_evidence: Option<MetricEvidence>,
    pub log_evidence: Option<LogEvidence>,
    pub score: f64,
}

impl EvidenceBundle {
    fn new(component: ComponentId) -> Self {
        Self {
            component,
            members: Vec::new(),
            trace_evidence: None,
            metric_evidence: None,
            log_evidence: None,
            score: 0.0,
        }
    }

    pub fn has_evidence(&self) -> bool {
        self.trace_evidence.is_some() || self.metric_evidence.is_some() || self.log_evidence.is_some()
    }

    /// The weighted score recomputed from the attached evidence.
    pub fn compute_score(&self, cfg: &FusionConfig) -> f64 {
        let t = self.trace_evidence.as_ref().map_or(0.0, |e| e.error_count as f64);
        let m = self.metric_evidence.as_ref().map_or(0.0, |e| e.severity_sum);
        let l = self.log_evidence.as_ref().map_or(0.0, |e| e.retained as f64);
        cfg.weight_trace * t + cfg.weight_metric * m + cfg.weight_log * l
    }

    /// Whether this bundle speaks for `component`, directly or through a member.
    pub fn covers(&self, component: &ComponentId) -> bool {
        &self.component == component || self.members.contains(component)
    }

    fn absorb(&mut self, other: EvidenceBundle, keep_own_trace: bool) {
        self.members.push(other.component);
        self.members.extend(other.members);
        self.members.sort();
        if let Some(t) = other.trace_evidence {
            match (&mut self.trace_evidence, keep_own_trace) {
                (Some(_), true) => {}
                (Some(mine), false) => {
                    mine.error_count += t.error_count;
                    let mut codes: BTreeMap<u32, u64> = mine.status_counts.iter().copied().collect();
                    for (c, n) in t.status_counts {
                        *codes.entry(c).or_insert(0) += n;
                    }
                    mine.status_counts = codes.into_iter().collect();
                    mine.pods.extend(t.pods);
                    mine.pods.sort();
                    mine.pods.dedup();
                    mine.paths.extend(t.paths);
                    sort_paths(&mut mine.paths);
                    mine.omitted_paths += t.omitted_paths;
                }
                (None, _) => self.trace_evidence = Some(t),
            }
        }
        if let Some(m) = other.metric_evidence {
            match &mut self.metric_evidence {
                Some(mine) => {
                    mine.severity_sum += m.severity_sum;
                    mine.anomaly_count += m.anomaly_count;
                    mine.items.extend(m.items);
                    sort_summaries(&mut mine.items);
                    mine.omitted += m.omitted;
                }
                None => self.metric_evidence = Some(m),
            }
        }
        if let Some(l) = other.log_evidence {
            match &mut self.log_evidence {
                Some(mine) => {
                    mine.matched += l.matched;
                    mine.retained += l.retained;
                    mine.items.extend(l.items);
                    sort_log_items(&mut mine.items);
                    mine.omitted += l.omitted;
                }
                None => self.log_evidence = Some(l),
            }
        }
    }

    /// A copy keeping only the first `k` items of each list.
    fn with_prefix(&self, kt: usize, km: usize, kl: usize) -> Self {
        let mut b = self.clone();
        if let Some(t) = &mut b.trace_evidence {
            let k = kt.min(t.paths.len());
            t.omitted_paths += t.paths.len() - k;
            t.paths.truncate(k);
        }
        if let Some(m) = &mut b.metric_evidence {
            let k = km.min(m.items.len());
            m.omitted += m.items.len() - k;
            m.items.truncate(k);
        }
        if let Some(l) = &mut b.log_evidence {
            let k = kl.min(l.items.len());
            l.omitted += l.items.len() - k;
            l.items.truncate(k);
        }
        b
    }

    fn item_lines(&self) -> [Vec<String>; 3] {
        let trace = self
            .trace_evidence
            .as_ref()
            .map(|t| t.paths.iter().map(path_line).collect())
            .unwrap_or_default();
        let metric = self
            .metric_evidence
            .as_ref()
            .map(|m| m.items.iter().map(metric_line).collect())
            .unwrap_or_default();
        let log = self
            .log_evidence
            .as_ref()
            .map(|l| l.items.iter().map(log_line).collect())
            .unwrap_or_default();
        [trace, metric, log]
    }

    fn render(&self, rank: usize, out: &mut String) {
        let [trace_lines, metric_lines, log_lines] = self.item_lines();
        let _ = writeln!(
            out,
            "\n[{rank}] {} ({}) score {:.2}",
            self.component.name, self.component.level, self.score
        );
        if !self.members.is_empty() {
            let names: Vec<&str> = self.members.iter().map(|m| m.name.as_str()).collect();
            let _ = writeln!(out, "members: {}", names.join(", "));
        }
        if let Some(t) = &self.trace_evidence {
            let codes: Vec<String> = t.status_counts.iter().map(|(c, n)| format!("{c} x{n}")).collect();
            let _ = writeln!(
                out,
                "trace: {} error spans on {} (status {})",
                t.error_count,
                t.pods.join(", "),
                codes.join(", ")
            );
            trace_lines.iter().for_each(|l| out.push_str(l));
            if t.omitted_paths > 0 {
                let _ = writeln!(out, "  ... {} more paths", t.omitted_paths);
            }
        }
        if let Some(m) = &self.metric_evidence {
            let _ = writeln!(
                out,
                "metric: severity {:.2} over {} anomalies",
                m.severity_sum, m.anomaly_count
            );
            metric_lines.iter().for_each(|l| out.push_str(l));
            if m.omitted > 0 {
                let _ = writeln!(out, "  ... {} more summaries", m.omitted);
            }
        }
        if let Some(l) = &self.log_evidence {
            let _ = writeln!(out, "log: {} matching lines, {} retained", l.matched, l.retained);
            log_lines.iter().for_each(|x| out.push_str(x));
            if l.omitted > 0 {
                let _ = writeln!(out, "  ... {} more lines", l.omitted);
            }
        }
    }
}

fn path_line(p: &PropagationPath) -> String {
    format!("  path {} (x{})\n", p.components.join(" > "), p.count)
}

fn metric_line(s: &MetricSummary) -> String {
    format!("  {}\n", s.describe())
}

fn log_line(l: &LogItem) -> String {
    format!(
        "  {} {} [{}] {}\n",
        format_hhmm(l.entry.timestamp),
        l.component,
        l.entry.pattern,
        l.entry.excerpt.replace('\n', " ")
    )
}

fn sort_paths(paths: &mut [PropagationPath]) {
    paths.sort_by(|a, b| b.count.cmp(&a.count).then(a.components.cmp(&b.components)));
}

fn sort_log_items(items: &mut [LogItem]) {
    items.sort_by(|a, b| (a.entry.timestamp, &a.component).cmp(&(b.entry.timestamp, &b.component)));
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityFlags {
    pub trace: bool,
    pub metric: bool,
    pub log: bool,
}

impl fmt::Display for ModalityFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [(self.trace, "trace"), (self.metric, "metric"), (self.log, "log")]
            .into_iter()
            .filter_map(|(on, n)| on.then_some(n))
            .collect();
        if names.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&names.join(", "))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceContext {
    pub case_window: TimeWindow,
    pub strategy: Strategy,
    /// Score descending, then component name ascending.
    pub bundles: Vec<EvidenceBundle>,
    pub modality_flags: ModalityFlags,
    /// Bundles before the `top_k` cut.
    pub total_bundles: usize,
    /// Raw record dump, for the `original` strategy only.
    pub raw_dump: Option<String>,
}

impl EvidenceContext {
    pub fn is_empty(&self) -> bool {
        self.bundles.is_empty() && self.raw_dump.as_deref().is_none_or(str::is_empty)
    }

    pub fn top(&self) -> Option<&EvidenceBundle> {
        self.bundles.first()
    }

    /// Stable text form handed to the reasoner.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "case window: {} to {}",
            format_secs(self.case_window.start()),
            format_secs(self.case_window.end())
        );
        let _ = writeln!(out, "strategy: {}", self.strategy);
        let _ = writeln!(out, "modalities: {}", self.modality_flags);
        if let Some(dump) = &self.raw_dump {
            out.push_str("raw telemetry:\n");
            out.push_str(dump);
            return out;
        }
        let _ = writeln!(out, "bundles: {} of {}", self.bundles.len(), self.total_bundles);
        for (i, b) in self.bundles.iter().enumerate() {
            b.render(i + 1, &mut out);
        }
        out
    }

    pub fn char_len(&self) -> usize {
        self.render().chars().count()
    }
}

/// The three analyzer outputs for one case.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReports {
    pub trace: TraceAnomalyReport,
    pub metric: MetricAnomalyReport,
    pub log: LogAnomalyReport,
}

impl AnalysisReports {
    pub fn is_empty(&self) -> bool {
        self.trace.is_empty() && self.metric.is_empty() && self.log.is_empty()
    }
}

/// Which levels may open new bundles.
#[derive(Debug, Clone, Copy)]
struct Anchors {
    trace: bool,
    metric: bool,
    log: bool,
}

fn anchors_for(strategy: Strategy) -> Anchors {
    match strategy {
        Strategy::Final | Strategy::Original => Anchors {
            trace: true,
            metric: true,
            log: true,
        },
        Strategy::Intermediate => Anchors {
            trace: true,
            metric: false,
            log: false,
        },
        Strategy::Early => Anchors {
            trace: false,
            metric: true,
            log: false,
        },
    }
}

/// Full residual fusion (the `final` strategy).
pub fn integrate(
    trace_rep: &TraceAnomalyReport,
    metric_rep: &MetricAnomalyReport,
    log_rep: &LogAnomalyReport,
    cfg: &FusionConfig,
    topology: &Topology,
) -> Result<EvidenceContext, FusionError> {
    if trace_rep.is_empty() && metric_rep.is_empty() && log_rep.is_empty() {
        return Err(FusionError::NoEvidence);
    }
    let reports = AnalysisReports {
        trace: trace_rep.clone(),
        metric: metric_rep.clone(),
        log: log_rep.clone(),
    };
    fuse(
        &reports,
        cfg,
        topology,
        None,
        anchors_for(Strategy::Final),
        Strategy::Final,
    )
}

/// Builds the context the configured strategy would hand to the reasoner.
pub fn apply_strategy(
    pre: &PreprocessedDataset,
    reports: &AnalysisReports,
    cfg: &FusionConfig,
) -> Result<EvidenceContext, FusionError> {
    match cfg.strategy {
        Strategy::Original => {
            let dump = raw_dump(pre, cfg.max_context_chars);
            if dump.is_empty() {
                return Err(FusionError::NoEvidence);
            }
            let mut ctx = EvidenceContext {
                case_window: pre.case_window,
                strategy: Strategy::Original,
                bundles: Vec::new(),
                modality_flags: ModalityFlags {
                    trace: !pre.traces_in_case_window().is_empty(),
                    metric: pre
                        .metric_series
                        .iter()
                        .any(|s| s.points.iter().any(|p| pre.case_window.contains_micros(p.0))),
                    log: !pre.logs_in_case_window().is_empty(),
                },
                total_bundles: 0,
                raw_dump: Some(String::new()),
            };
            let head = ctx.char_len();
            let budget = cfg.max_context_chars.saturating_sub(head);
            ctx.raw_dump = Some(truncate_chars(&dump, budget));
            Ok(ctx)
        }
        s => fuse(reports, cfg, &pre.topology, Some(pre.case_window), anchors_for(s), s),
    }
}

fn fuse(
    reports: &AnalysisReports,
    cfg: &FusionConfig,
    topology: &Topology,
    window: Option<TimeWindow>,
    anchors: Anchors,
    strategy: Strategy,
) -> Result<EvidenceContext, FusionError> {
    // evidence per component, per level
    let candidate_pods: BTreeSet<&str> = reports
        .trace
        .candidate_components
        .iter()
        .filter(|c| c.component.level != ComponentLevel::Service)
        .map(|c| c.component.name.as_str())
        .collect();
    let mut escalated: BTreeSet<ComponentId> = BTreeSet::new();
    let mut trace_ev: BTreeMap<ComponentId, TraceEvidence> = BTreeMap::new();
    for c in &reports.trace.candidate_components {
        let pods: Vec<String> = if c.component.level == ComponentLevel::Service {
            let pods: Vec<String> = candidate_pods
                .iter()
                .filter(|p| derive_service(p) == c.component.name && **p != c.component.name)
                .map(|p| p.to_string())
                .collect();
            if !pods.is_empty() {
                escalated.insert(c.component.clone());
            }
            if pods.is_empty() {
                vec![c.component.name.clone()]
            } else {
                pods
            }
        } else {
            vec![c.component.name.clone()]
        };
        let mut paths: Vec<PropagationPath> = reports.trace.paths_for(&c.component).into_iter().cloned().collect();
        sort_paths(&mut paths);
        trace_ev.insert(
            c.component.clone(),
            TraceEvidence {
                error_count: c.error_count,
                status_counts: c.status_counts.clone(),
                pods,
                paths,
                omitted_paths: 0,
            },
        );
    }

    let mut by_component: BTreeMap<&ComponentId, Vec<MetricAnomaly>> = BTreeMap::new();
    for a in &reports.metric.anomalies {
        by_component.entry(&a.component).or_default().push(a.clone());
    }
    let metric_ev: BTreeMap<ComponentId, MetricEvidence> = by_component
        .into_iter()
        .map(|(c, list)| {
            let e = MetricEvidence {
                severity_sum: reports.metric.per_component_score.get(c).copied().unwrap_or(0.0),
                anomaly_count: list.len(),
                items: summarize(&list),
                omitted: 0,
            };
            (c.clone(), e)
        })
        .collect();

    let mut log_ev: BTreeMap<ComponentId, LogEvidence> = BTreeMap::new();
    for (c, count) in &reports.log.per_component_count {
        let entries = reports.log.entries.get(c).cloned().unwrap_or_default();
        let mut items: Vec<LogItem> = entries
            .into_iter()
            .map(|entry| LogItem {
                component: c.name.clone(),
                entry,
            })
            .collect();
        sort_log_items(&mut items);
        log_ev.insert(
            c.clone(),
            LogEvidence {
                matched: *count,
                retained: items.len() as u64,
                items,
                omitted: 0,
            },
        );
    }

    let mut flags = ModalityFlags::default();
    let mut bundles: BTreeMap<ComponentId, EvidenceBundle> = BTreeMap::new();
    if anchors.trace {
        for (c, t) in &trace_ev {
            bundles
                .entry(c.clone())
                .or_insert_with(|| EvidenceBundle::new(c.clone()))
                .trace_evidence = Some(t.clone());
        }
    }
    if anchors.metric {
        for c in metric_ev.keys() {
            bundles
                .entry(c.clone())
                .or_insert_with(|| EvidenceBundle::new(c.clone()));
        }
    }
    if anchors.log {
        for c in log_ev.keys() {
            bundles
                .entry(c.clone())
                .or_insert_with(|| EvidenceBundle::new(c.clone()));
        }
    }
    for (c, b) in bundles.iter_mut() {
        if b.trace_evidence.is_none() {
            b.trace_evidence = trace_ev.get(c).cloned();
        }
        b.metric_evidence = metric_ev.get(c).cloned();
        b.log_evidence = log_ev.get(c).cloned();
    }

    absorb_members(&mut bundles, topology, &escalated);

    let mut list: Vec<EvidenceBundle> = bundles.into_values().filter(EvidenceBundle::has_evidence).collect();
    for b in &mut list {
        b.score = b.compute_score(cfg);
        flags.trace |= b.trace_evidence.is_some();
        flags.metric |= b.metric_evidence.is_some();
        flags.log |= b.log_evidence.is_some();
    }
    if list.is_empty() {
        return Err(FusionError::NoEvidence);
    }
    list.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.component.cmp(&b.component)));
    let total = list.len();
    list.truncate(cfg.top_k);

    let case_window = window.unwrap_or_else(|| infer_window(reports));
    let mut ctx = EvidenceContext {
        case_window,
        strategy,
        bundles: list,
        modality_flags: flags,
        total_bundles: total,
        raw_dump: None,
    };
    fit_to_budget(&mut ctx, cfg.max_context_chars);
    if ctx.bundles.is_empty() {
        return Err(FusionError::NoEvidence);
    }
    Ok(ctx)
}

/// Folds pod bundles into an existing service or node bundle when all of
/// that component's pods (at least two) have bundles. Services go first.
fn absorb_members(
    bundles: &mut BTreeMap<ComponentId, EvidenceBundle>,
    topology: &Topology,
    escalated: &BTreeSet<ComponentId>,
) {
    for level in [ComponentLevel::Service, ComponentLevel::Node] {
        let parents: Vec<ComponentId> = bundles.keys().filter(|c| c.level == level).cloned().collect();
        for parent in parents {
            let members: Vec<ComponentId> = topology.members(&parent).into_iter().map(ComponentId::pod).collect();
            if members.len() < 2 || !members.iter().all(|m| bundles.contains_key(m)) {
                continue;
            }
            let mut target = bundles.remove(&parent).expect("parent bundle present");
            let keep_own_trace = escalated.contains(&parent);
            for m in members {
                let child = bundles.remove(&m).expect("member bundle present");
                target.absorb(child, keep_own_trace);
            }
            bundles.insert(parent, target);
        }
    }
}

fn infer_window(reports: &AnalysisReports) -> TimeWindow {
    let times: Vec<i64> = reports
        .metric
        .anomalies
        .iter()
        .map(|a| a.timestamp)
        .chain(reports.log.entries.values().flatten().map(|e| e.timestamp))
        .collect();
    let lo = times.iter().min().copied().unwrap_or(0).div_euclid(1_000_000);
    let hi = times.iter().max().copied().unwrap_or(0).div_euclid(1_000_000) + 1;
    TimeWindow::new(lo, hi).expect("hi > lo")
}

/// Drops list items, then whole bundles from the tail, until the rendered
/// context fits `max_chars`. Item budgets are proportional to bundle score.
fn fit_to_budget(ctx: &mut EvidenceContext, max_chars: usize) {
    if ctx.char_len() <= max_chars {
        return;
    }
    let originals = std::mem::take(&mut ctx.bundles);
    let mut n = originals.len();
    let mut slack = 0usize;
    loop {
        ctx.bundles = originals[..n].iter().map(|b| b.with_prefix(0, 0, 0)).collect();
        let base = ctx.char_len();
        if base > max_chars {
            if n == 0 {
                return;
            }
            n -= 1;
            slack = 0;
            continue;
        }
        let available = (max_chars - base).saturating_sub(slack);
        let total_score: f64 = originals[..n].iter().map(|b| b.score).sum();
        let mut kept = Vec::with_capacity(n);
        for b in &originals[..n] {
            let share = if total_score > 0.0 {
                b.score / total_score
            } else {
                1.0 / n as f64
            };
            let budget = (available as f64 * share).floor() as usize;
            let [kt, km, kl] = round_robin(&b.item_lines(), budget);
            kept.push(b.with_prefix(kt, km, kl));
        }
        ctx.bundles = kept;
        let len = ctx.char_len();
        if len <= max_chars {
            return;
        }
        slack += len - max_chars;
    }
}

/// Takes items from each list in turn while they fit in `budget` chars.
fn round_robin(lists: &[Vec<String>; 3], budget: usize) -> [usize; 3] {
    let mut taken = [0usize; 3];
    let mut used = 0usize;
    let mut open = [true; 3];
    while open.iter().any(|&o| o) {
        for i in 0..3 {
            if !open[i] {
                continue;
            }
            match lists[i].get(taken[i]) {
                Some(line) if used + line.chars().count() <= budget => {
                    used += line.chars().count();
                    taken[i] += 1;
                }
                _ => open[i] = false,
            }
        }
    }
    taken
}

fn truncate_chars(text: &str, max: usize) -> String {
    match text.char_indices().nth(max) {
        None => text.to_string(),
        Some((cut, _)) => {
            let head = &text[..cut];
            match head.rfind('\n') {
                Some(nl) => head[..=nl].to_string(),
                None => String::new(),
            }
        }
    }
}

/// Case-window records rendered one per line, in time order, with each
/// modality limited to a third of `max_chars`.
pub fn raw_dump(pre: &PreprocessedDataset, max_chars: usize) -> String {
    let share = max_chars / 3;
    let window = pre.case_window;

    let mut spans: Vec<_> = pre.traces_in_case_window().into_values().flatten().collect();
    spans.sort_by(|a, b| (a.start_time, &a.span_id).cmp(&(b.start_time, &b.span_id)));
    let span_lines = spans.iter().map(|s| {
        format!(
            "span {} {} {} status={} duration={}us\n",
            format_micros(s.start_time),
            s.trace_id,
            s.pod,
            s.grpc_status(),
            s.duration
        )
    });

    let mut points: Vec<(i64, &ComponentId, &str, f64)> = pre
        .metric_series
        .iter()
        .filter(|s| !s.derived)
        .flat_map(|s| {
            s.points
                .iter()
                .filter(|p| window.contains_micros(p.0))
                .map(move |p| (p.0, &s.component, s.metric_name.as_str(), p.1))
        })
        .collect();
    points.sort_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)).then(a.3.total_cmp(&b.3)));
    let metric_lines = points
        .iter()
        .map(|(t, c, m, v)| format!("metric {} {} {m}={v}\n", format_micros(*t), c.name));

    let mut logs: Vec<_> = pre
        .logs_in_case_window()
        .into_iter()
        .flat_map(|(c, logs)| logs.into_iter().map(move |l| (c.name.clone(), l)))
        .collect();
    logs.sort_by(|a, b| (a.1.timestamp, &a.0).cmp(&(b.1.timestamp, &b.0)));
    let log_lines = logs.iter().map(|(c, l)| {
        let msg: String = l.message.chars().take(200).collect();
        format!("log {} {c} {}\n", format_micros(l.timestamp), msg.replace('\n', " "))
    });

    let mut out = String::new();
    for lines in [
        Box::new(span_lines) as Box<dyn Iterator<Item = String>>,
        Box::new(metric_lines),
        Box::new(log_lines),
    ] {
        let mut used = 0;
        for line in lines {
            let n = line.chars().count();
            if used + n > share {
                break;
            }
            used += n;
            out.push_str(&line);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::MetricName;
    use crate::metric_analysis::AnomalyKind;
    use crate::trace_analysis::TraceCandidate;

    fn anomaly(component: ComponentId, metric: MetricName, severity: f64) -> MetricAnomaly {
        MetricAnomaly {
            component,
            metric_name: metric,
            kind: AnomalyKind::Threshold,
            timestamp: 1_749_147_000_000_000,
            severity,
            value: 1.0,
            baseline: 0.0,
            detail: format!("{metric} high"),
        }
    }

    fn logs(component: ComponentId, n: u64) -> LogAnomalyReport {
        let entries = (0..n)
            .map(|i| LogEntry {
                timestamp: 1_749_147_000_000_000 + i as i64,
                pattern: "Error".into(),
                excerpt: format!("Error {i}"),
            })
            .collect();
        LogAnomalyReport {
            entries: BTreeMap::from([(component.clone(), entries)]),
            per_component_count: BTreeMap::from([(component, n)]),
        }
    }

    fn trace_for(pod: &str, errors: u64) -> TraceAnomalyReport {
        TraceAnomalyReport {
            anomalous_leaves: vec![],
            propagation_paths: vec![PropagationPath {
                components: vec!["frontend-0".into(), pod.into()],
                count: errors,
            }],
            candidate_components: vec![TraceCandidate {
                component: ComponentId::pod(pod),
                error_count: errors,
                max_depth: 1,
                status_counts: vec![(14, errors)],
            }],
            anomalous_span_count: errors * 2,
        }
    }

    #[test]
    fn corroborated_candidate_dominates() {
        let redis = ComponentId::pod("redis-cart-0");
        let metric = MetricAnomalyReport::from_anomalies(vec![
            anomaly(redis.clone(), MetricName::Rrt, 10.0),
            anomaly(ComponentId::pod("adservice-1"), MetricName::CpuUsage, 4.0),
        ]);
        let ctx = integrate(
            &trace_for("redis-cart-0", 12),
            &metric,
            &logs(redis.clone(), 5),
            &FusionConfig::default(),
            &Topology::default(),
        )
        .unwrap();
        let top = ctx.top().unwrap();
        assert_eq!(top.component, redis);
        assert!(top.trace_evidence.is_some() && top.metric_evidence.is_some() && top.log_evidence.is_some());
        assert_eq!(top.score, 3.0 * 12.0 + 2.0 * 10.0 + 5.0);
        assert_eq!(ctx.bundles.len(), 2);
    }

    #[test]
    fn metric_only_component_opens_a_bundle() {
        let c = ComponentId::pod("checkoutservice-2");
        let metric = MetricAnomalyReport::from_anomalies(vec![anomaly(c.clone(), MetricName::CpuUsage, 6.0)]);
        let ctx = integrate(
            &TraceAnomalyReport::default(),
            &metric,
            &logs(c.clone(), 3),
            &FusionConfig::default(),
            &Topology::default(),
        )
        .unwrap();
        let b = ctx.top().unwrap();
        assert_eq!(b.component, c);
        assert!(b.trace_evidence.is_none());
        assert_eq!(
            ctx.modality_flags,
            ModalityFlags {
                trace: false,
                metric: true,
                log: true
            }
        );
    }

    #[test]
    fn nothing_to_fuse() {
        let r = integrate(
            &TraceAnomalyReport::default(),
            &MetricAnomalyReport::default(),
            &LogAnomalyReport::default(),
            &FusionConfig::default(),
            &Topology::default(),
        );
        assert_eq!(r.unwrap_err(), FusionError::NoEvidence);
    }

    #[test]
    fn pods_fold_into_their_service() {
        let mut topo = Topology::default();
        let mut anomalies = vec![anomaly(ComponentId::service("cartservice"), MetricName::Rrt, 5.0)];
        for i in 0..3 {
            let pod = format!("cartservice-{i}");
            topo.add_pod(&pod, None);
            anomalies.push(anomaly(ComponentId::pod(pod), MetricName::Rrt, 5.0));
        }
        let metric = MetricAnomalyReport::from_anomalies(anomalies);
        let ctx = integrate(
            &TraceAnomalyReport::default(),
            &metric,
            &LogAnomalyReport::default(),
            &FusionConfig::default(),
            &topo,
        )
        .unwrap();
        assert_eq!(ctx.bundles.len(), 1);
        let b = &ctx.bundles[0];
        assert_eq!(b.component, ComponentId::service("cartservice"));
        assert_eq!(b.members.len(), 3);
        assert_eq!(b.metric_evidence.as_ref().unwrap().severity_sum, 20.0);
        assert!(b.covers(&ComponentId::pod("cartservice-1")));
    }

    #[test]
    fn one_pod_does_not_fold() {
        let mut topo = Topology::default();
        for i in 0..3 {
            topo.add_pod(&format!("cartservice-{i}"), None);
        }
        let metric = MetricAnomalyReport::from_anomalies(vec![
            anomaly(ComponentId::service("cartservice"), MetricName::Rrt, 2.0),
            anomaly(ComponentId::pod("cartservice-0"), MetricName::Rrt, 5.0),
        ]);
        let ctx = integrate(
            &TraceAnomalyReport::default(),
            &metric,
            &LogAnomalyReport::default(),
            &FusionConfig::default(),
            &topo,
        )
        .unwrap();
        assert_eq!(ctx.bundles.len(), 2);
        assert_eq!(ctx.bundles[0].component.name, "cartservice-0");
    }

    #[test]
    fn ties_break_on_name() {
        let metric = MetricAnomalyReport::from_anomalies(vec![
            anomaly(ComponentId::pod("b-0"), MetricName::CpuUsage, 1.0),
            anomaly(ComponentId::pod("a-0"), MetricName::CpuUsage, 1.0),
        ]);
        let ctx = integrate(
            &TraceAnomalyReport::default(),
            &metric,
            &LogAnomalyReport::default(),
            &FusionConfig::default(),
            &Topology::default(),
        )
        .unwrap();
        assert_eq!(ctx.bundles[0].component.name, "a-0");
    }

    #[test]
    fn context_respects_char_budget() {
        let kinds = [
            AnomalyKind::Threshold,
            AnomalyKind::Trend,
            AnomalyKind::ChangePoint,
            AnomalyKind::Mismatch,
        ];
        let mut anomalies = Vec::new();
        for c in 0..8 {
            for (i, metric) in MetricName::ALL.into_iter().enumerate() {
                for (j, kind) in kinds.into_iter().enumerate() {
                    let mut a = anomaly(ComponentId::pod(format!("svc{c}-0")), metric, 1.0 + (i * 4 + j) as f64);
                    a.kind = kind;
                    anomalies.push(a);
                }
            }
        }
        let metric = MetricAnomalyReport::from_anomalies(anomalies);
        for max in [1_000, 3_000, 12_000] {
            let cfg = FusionConfig {
                max_context_chars: max,
                ..Default::default()
            };
            let ctx = integrate(
                &TraceAnomalyReport::default(),
                &metric,
                &LogAnomalyReport::default(),
                &cfg,
                &Topology::default(),
            )
            .unwrap();
            assert!(ctx.char_len() <= max, "{} > {max}", ctx.char_len());
            for b in &ctx.bundles {
                let m = b.metric_evidence.as_ref().unwrap();
                assert_eq!(m.items.len() + m.omitted, 44);
                assert_eq!(b.score, b.compute_score(&cfg));
            }
        }
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
        }
        assert!("late".parse::<Strategy>().is_err());
    }
}

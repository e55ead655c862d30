//! Call-tree reconstruction and gRPC status analysis.
//!
//! Trees are built with an explicit worklist, so arbitrarily deep traces do
//! not touch the call stack. A span whose parent is missing from its trace
//! becomes an extra root; a parent chain that loops back on itself is cut at
//! the edge that closes the loop.
//!
//! The root-cause candidate on an error path is the deepest anomalous span
//! whose children are all OK: callers inherit errors from their callees, so
//! the error "bottoms out" at the component that produced it.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::component::{derive_service, resolve_component, ComponentId};
use crate::ingest::SpanRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallNode {
    pub span: SpanRecord,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub depth: usize,
}

impl CallNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn is_anomalous(&self) -> bool {
        self.span.grpc_status() != 0
    }
}

/// One trace's invocation forest, stored as an arena.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallTree {
    pub trace_id: String,
    pub nodes: Vec<CallNode>,
    pub roots: Vec<usize>,
}

impl CallTree {
    /// `(parent span id, child span id)` pairs.
    pub fn edges(&self) -> BTreeSet<(String, String)> {
        self.nodes
            .iter()
            .filter_map(|n| {
                n.parent
                    .map(|p| (self.nodes[p].span.span_id.clone(), n.span.span_id.clone()))
            })
            .collect()
    }

    /// Number of nodes reachable from `root`, counted iteratively.
    pub fn subtree_size(&self, root: usize) -> usize {
        let mut stack = vec![root];
        let mut n = 0;
        while let Some(i) = stack.pop() {
            n += 1;
            stack.extend(&self.nodes[i].children);
        }
        n
    }

    /// Pod names from the root down to `node`.
    pub fn path_to(&self, node: usize) -> Vec<String> {
        let mut path = Vec::new();
        let mut cur = Some(node);
        while let Some(i) = cur {
            path.push(self.nodes[i].span.pod.clone());
            cur = self.nodes[i].parent;
        }
        path.reverse();
        path
    }

    /// Indented text rendering; anomalous leaves of error paths are marked.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "trace {}", self.trace_id);
        let mut stack: Vec<(usize, String, bool, bool)> = self
            .roots
            .iter()
            .rev()
            .enumerate()
            .map(|(k, &r)| (r, String::new(), k == 0, true))
            .collect();
        while let Some((i, prefix, last, is_root)) = stack.pop() {
            let node = &self.nodes[i];
            let branch = if is_root {
                ""
            } else if last {
                "└── "
            } else {
                "├── "
            };
            let _ = write!(out, "{prefix}{branch}{}", node.span.pod);
            let status = node.span.grpc_status();
            if status != 0 {
                let _ = write!(out, "  [status {status}]");
                if node.children.iter().all(|&c| !self.nodes[c].is_anomalous()) {
                    out.push_str("  #Faulty Node");
                }
            }
            out.push('\n');
            let child_prefix = if is_root {
                String::new()
            } else if last {
                format!("{prefix}    ")
            } else {
                format!("{prefix}│   ")
            };
            let n = node.children.len();
            for (k, &c) in node.children.iter().enumerate().rev() {
                stack.push((c, child_prefix.clone(), k + 1 == n, false));
            }
        }
        out
    }
}

/// Builds one forest per trace. Returns the trees and any structural warnings.
pub fn build_call_trees(trace_groups: &BTreeMap<String, Vec<SpanRecord>>) -> (Vec<CallTree>, Vec<String>) {
    let built: Vec<(CallTree, Vec<String>)> = trace_groups
        .par_iter()
        .map(|(trace_id, spans)| build_tree(trace_id, spans))
        .collect();
    let mut trees = Vec::with_capacity(built.len());
    let mut warnings = Vec::new();
    for (tree, mut w) in built {
        trees.push(tree);
        warnings.append(&mut w);
    }
    (trees, warnings)
}

fn build_tree(trace_id: &str, spans: &[SpanRecord]) -> (CallTree, Vec<String>) {
    let mut warnings = Vec::new();
    let mut sorted: Vec<&SpanRecord> = spans.iter().collect();
    sorted.sort_by(|a, b| (a.start_time, &a.span_id).cmp(&(b.start_time, &b.span_id)));

    let mut index: HashMap<&str, usize> = HashMap::with_capacity(sorted.len());
    let mut nodes: Vec<CallNode> = Vec::with_capacity(sorted.len());
    for span in sorted {
        if index.contains_key(span.span_id.as_str()) {
            warnings.push(format!(
                "trace {trace_id}: duplicate span id {}, later copy dropped",
                span.span_id
            ));
            continue;
        }
        index.insert(span.span_id.as_str(), nodes.len());
        nodes.push(CallNode {
            span: span.clone(),
            parent: None,
            children: Vec::new(),
            depth: 0,
        });
    }

    let mut parent: Vec<Option<usize>> = nodes
        .iter()
        .map(|n| n.span.parent_span_id.as_deref().and_then(|p| index.get(p).copied()))
        .collect();

    // cut cycles: walk each parent chain, marking the nodes on the current path
    const UNSEEN: u8 = 0;
    const ON_PATH: u8 = 1;
    const DONE: u8 = 2;
    let mut state = vec![UNSEEN; nodes.len()];
    for start in 0..nodes.len() {
        let mut path = Vec::new();
        let mut cur = start;
        while state[cur] == UNSEEN {
            state[cur] = ON_PATH;
            path.push(cur);
            match parent[cur] {
                Some(p) if state[p] == ON_PATH => {
                    warnings.push(format!(
                        "trace {trace_id}: cyclic reference {} -> {}, span promoted to root",
                        nodes[cur].span.span_id, nodes[p].span.span_id
                    ));
                    parent[cur] = None;
                    break;
                }
                Some(p) => cur = p,
                None => break,
            }
        }
        for i in path {
            state[i] = DONE;
        }
    }

    let mut roots = Vec::new();
    for (i, p) in parent.iter().enumerate() {
        match p {
            Some(p) => nodes[*p].children.push(i),
            None => roots.push(i),
        }
        nodes[i].parent = *p;
    }
    let mut queue: VecDeque<usize> = roots.iter().copied().collect();
    while let Some(i) = queue.pop_front() {
        let depth = nodes[i].depth;
        for k in 0..nodes[i].children.len() {
            let c = nodes[i].children[k];
            nodes[c].depth = depth + 1;
            queue.push_back(c);
        }
    }
    (
        CallTree {
            trace_id: trace_id.to_string(),
            nodes,
            roots,
        },
        warnings,
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalousLeaf {
    pub component: ComponentId,
    pub status_code: u32,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropagationPath {
    /// Pod names from the trace root to the faulty node.
    pub components: Vec<String>,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceCandidate {
    pub component: ComponentId,
    pub error_count: u64,
    pub max_depth: usize,
    /// `(status code, occurrences)`, ascending by code.
    pub status_counts: Vec<(u32, u64)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceAnomalyReport {
    pub anomalous_leaves: Vec<AnomalousLeaf>,
    pub propagation_paths: Vec<PropagationPath>,
    /// Ranked by error count desc, depth desc, name asc; escalated services
    /// are placed directly above their highest-ranked pod.
    pub candidate_components: Vec<TraceCandidate>,
    /// Spans with a non-OK status anywhere in the forest.
    pub anomalous_span_count: u64,
}

impl TraceAnomalyReport {
    pub fn is_empty(&self) -> bool {
        self.candidate_components.is_empty()
    }

    pub fn candidate(&self, component: &ComponentId) -> Option<&TraceCandidate> {
        self.candidate_components.iter().find(|c| &c.component == component)
    }

    /// Paths that end at `component`, or at one of its pods for a service.
    pub fn paths_for(&self, component: &ComponentId) -> Vec<&PropagationPath> {
        self.propagation_paths
            .iter()
            .filter(|p| {
                p.components.last().is_some_and(|leaf| {
                    leaf == &component.name
                        || (component.level == crate::component::ComponentLevel::Service
                            && derive_service(leaf) == component.name)
                })
            })
            .collect()
    }
}

#[derive(Default)]
struct Tally {
    leaves: BTreeMap<(ComponentId, u32), u64>,
    paths: BTreeMap<Vec<String>, u64>,
    depth: BTreeMap<ComponentId, usize>,
    anomalous: u64,
    pods: BTreeSet<String>,
}

impl Tally {
    fn merge(mut self, other: Tally) -> Tally {
        for (k, v) in other.leaves {
            *self.leaves.entry(k).or_insert(0) += v;
        }
        for (k, v) in other.paths {
            *self.paths.entry(k).or_insert(0) += v;
        }
        for (k, v) in other.depth {
            let d = self.depth.entry(k).or_insert(0);
            *d = (*d).max(v);
        }
        self.anomalous += other.anomalous;
        self.pods.extend(other.pods);
        self
    }
}

fn component_of(span: &SpanRecord) -> ComponentId {
    resolve_component(&span.pod, &BTreeSet::new()).unwrap_or_else(|| ComponentId::service(span.service.clone()))
}

fn tally_tree(tree: &CallTree) -> Tally {
    let mut t = Tally::default();
    for (i, node) in tree.nodes.iter().enumerate() {
        t.pods.insert(node.span.pod.clone());
        if !node.is_anomalous() {
            continue;
        }
        t.anomalous += 1;
        if node.children.iter().any(|&c| tree.nodes[c].is_anomalous()) {
            continue;
        }
        let component = component_of(&node.span);
        *t.leaves
            .entry((component.clone(), node.span.grpc_status()))
            .or_insert(0) += 1;
        *t.paths.entry(tree.path_to(i)).or_insert(0) += 1;
        let d = t.depth.entry(component).or_insert(0);
        *d = (*d).max(node.depth);
    }
    t
}

/// Collects anomalous spans and ranks root-cause candidates.
pub fn detect_trace_anomalies(forest: &[CallTree]) -> TraceAnomalyReport {
    let tally = forest.par_iter().map(tally_tree).reduce(Tally::default, Tally::merge);

    let mut per_component: BTreeMap<ComponentId, TraceCandidate> = BTreeMap::new();
    for ((component, code), count) in &tally.leaves {
        let c = per_component
            .entry(component.clone())
            .or_insert_with(|| TraceCandidate {
                component: component.clone(),
                error_count: 0,
                max_depth: tally.depth[component],
                status_counts: Vec::new(),
            });
        c.error_count += count;
        c.status_counts.push((*code, *count));
    }
    let mut ranked: Vec<TraceCandidate> = per_component.into_values().collect();
    ranked.sort_by(|a, b| {
        b.error_count
            .cmp(&a.error_count)
            .then(b.max_depth.cmp(&a.max_depth))
            .then(a.component.name.cmp(&b.component.name))
    });

    // a service whose every observed pod is a candidate is escalated
    let mut service_pods: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for pod in &tally.pods {
        if pod != derive_service(pod) {
            service_pods
                .entry(derive_service(pod))
                .or_default()
                .insert(pod.as_str());
        }
    }
    let candidate_pods: BTreeSet<&str> = ranked.iter().map(|c| c.component.name.as_str()).collect();
    let mut escalations: Vec<(usize, TraceCandidate)> = Vec::new();
    for (service, pods) in &service_pods {
        if pods.len() < 2 || !pods.iter().all(|p| candidate_pods.contains(p)) {
            continue;
        }
        let members: Vec<&TraceCandidate> = ranked
            .iter()
            .filter(|c| pods.contains(c.component.name.as_str()))
            .collect();
        let mut codes: BTreeMap<u32, u64> = BTreeMap::new();
        for m in &members {
            for (code, n) in &m.status_counts {
                *codes.entry(*code).or_insert(0) += n;
            }
        }
        let first = ranked
            .iter()
            .position(|c| pods.contains(c.component.name.as_str()))
            .expect("at least one member");
        escalations.push((
            first,
            TraceCandidate {
                component: ComponentId::service(*service),
                error_count: members.iter().map(|m| m.error_count).sum(),
                max_depth: members.iter().map(|m| m.max_depth).max().unwrap_or(0),
                status_counts: codes.into_iter().collect(),
            },
        ));
    }
    escalations.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.component.name.cmp(&a.1.component.name)));
    for (pos, candidate) in escalations {
        ranked.insert(pos, candidate);
    }

    let mut propagation_paths: Vec<PropagationPath> = tally
        .paths
        .into_iter()
        .map(|(components, count)| PropagationPath { components, count })
        .collect();
    propagation_paths.sort_by(|a, b| b.count.cmp(&a.count).then(a.components.cmp(&b.components)));

    TraceAnomalyReport {
        anomalous_leaves: tally
            .leaves
            .into_iter()
            .map(|((component, status_code), count)| AnomalousLeaf {
                component,
                status_code,
                count,
            })
            .collect(),
        propagation_paths,
        candidate_components: ranked,
        anomalous_span_count: tally.anomalous,
    }
}

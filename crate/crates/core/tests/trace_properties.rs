//! Call-tree construction and anomaly ranking on random forests, checked
//! against a direct computation from the parent links.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rca_core::ingest::SpanRecord;
use rca_core::trace_analysis::{build_call_trees, detect_trace_anomalies};

const PODS: [&str; 6] = [
    "frontend-0",
    "cartservice-0",
    "cartservice-1",
    "redis-cart-0",
    "adservice-0",
    "adservice-1",
];

#[derive(Debug, Clone)]
struct RawSpan {
    parent: Option<usize>,
    pod: usize,
    status: u32,
}

fn raw_trace() -> impl Strategy<Value = Vec<RawSpan>> {
    (1usize..24).prop_flat_map(|n| {
        (0..n)
            .map(|i| {
                let parent = if i == 0 {
                    Just(None).boxed()
                } else {
                    prop_oneof![1 => Just(None), 6 => (0..i).prop_map(Some)].boxed()
                };
                (
                    parent,
                    0..PODS.len(),
                    prop_oneof![3 => Just(0u32), 1 => Just(14u32), 1 => Just(2u32)],
                )
                    .prop_map(|(parent, pod, status)| RawSpan { parent, pod, status })
            })
            .collect::<Vec<_>>()
    })
}

fn spans_of(trace_id: &str, raw: &[RawSpan]) -> Vec<SpanRecord> {
    raw.iter()
        .enumerate()
        .map(|(i, r)| {
            let pod = PODS[r.pod];
            SpanRecord {
                trace_id: trace_id.into(),
                span_id: format!("{trace_id}-{i}"),
                parent_span_id: r.parent.map(|p| format!("{trace_id}-{p}")),
                service: rca_core::component::derive_service(pod).into(),
                pod: pod.into(),
                start_time: i as i64,
                duration: 10,
                status_code: Some(r.status),
                tags: BTreeMap::new(),
            }
        })
        .collect()
}

/// Deepest non-OK spans: erroring spans with no erroring child.
fn oracle_leaves(raw: &[RawSpan]) -> BTreeMap<(String, u32), u64> {
    let mut has_bad_child = vec![false; raw.len()];
    for r in raw {
        if let Some(p) = r.parent {
            if r.status != 0 {
                has_bad_child[p] = true;
            }
        }
    }
    let mut out = BTreeMap::new();
    for (i, r) in raw.iter().enumerate() {
        if r.status != 0 && !has_bad_child[i] {
            *out.entry((PODS[r.pod].to_string(), r.status)).or_insert(0) += 1;
        }
    }
    out
}

fn oracle_depth(raw: &[RawSpan], i: usize) -> usize {
    let mut d = 0;
    let mut cur = raw[i].parent;
    while let Some(p) = cur {
        d += 1;
        cur = raw[p].parent;
    }
    d
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn forest_mirrors_parent_links(traces in prop::collection::vec(raw_trace(), 1..5)) {
        let groups: BTreeMap<String, Vec<SpanRecord>> = traces
            .iter()
            .enumerate()
            .map(|(t, raw)| (format!("t{t}"), spans_of(&format!("t{t}"), raw)))
            .collect();
        let (forest, warnings) = build_call_trees(&groups);
        prop_assert!(warnings.is_empty(), "{warnings:?}");
        prop_assert_eq!(forest.len(), traces.len());
        for (tree, raw) in forest.iter().zip(&traces) {
            prop_assert_eq!(tree.nodes.len(), raw.len());
            let ids: BTreeSet<&str> = tree.nodes.iter().map(|n| n.span.span_id.as_str()).collect();
            prop_assert_eq!(ids.len(), raw.len());
            let expected_edges: BTreeSet<(String, String)> = raw
                .iter()
                .enumerate()
                .filter_map(|(i, r)| r.parent.map(|p| (format!("{}-{p}", tree.trace_id), format!("{}-{i}", tree.trace_id))))
                .collect();
            prop_assert_eq!(tree.edges(), expected_edges);
            let roots = raw.iter().filter(|r| r.parent.is_none()).count();
            prop_assert_eq!(tree.roots.len(), roots);
            let reachable: usize = tree.roots.iter().map(|&r| tree.subtree_size(r)).sum();
            prop_assert_eq!(reachable, raw.len());
            for node in &tree.nodes {
                let i: usize = node.span.span_id.rsplit('-').next().unwrap().parse().unwrap();
                prop_assert_eq!(node.depth, oracle_depth(raw, i));
            }
        }
    }

    #[test]
    fn anomalies_match_oracle_and_ignore_input_order(
        traces in prop::collection::vec(raw_trace(), 1..5),
        rotate in 0usize..23,
    ) {
        let mut groups: BTreeMap<String, Vec<SpanRecord>> = BTreeMap::new();
        let mut expected: BTreeMap<(String, u32), u64> = BTreeMap::new();
        for (t, raw) in traces.iter().enumerate() {
            groups.insert(format!("t{t}"), spans_of(&format!("t{t}"), raw));
            for (k, v) in oracle_leaves(raw) {
                *expected.entry(k).or_insert(0) += v;
            }
        }
        let (forest, _) = build_call_trees(&groups);
        let report = detect_trace_anomalies(&forest);

        let got: BTreeMap<(String, u32), u64> = report
            .anomalous_leaves
            .iter()
            .map(|l| ((l.component.name.clone(), l.status_code), l.count))
            .collect();
        prop_assert_eq!(&got, &expected);
        let bad = traces.iter().flatten().filter(|r| r.status != 0).count() as u64;
        prop_assert_eq!(report.anomalous_span_count, bad);
        let path_total: u64 = report.propagation_paths.iter().map(|p| p.count).sum();
        prop_assert_eq!(path_total, expected.values().sum::<u64>());

        let shuffled: BTreeMap<String, Vec<SpanRecord>> = groups
            .iter()
            .map(|(k, v)| {
                let mut v = v.clone();
                let n = v.len();
                v.rotate_left(rotate % n);
                v.reverse();
                (k.clone(), v)
            })
            .collect();
        let (forest2, _) = build_call_trees(&shuffled);
        prop_assert_eq!(detect_trace_anomalies(&forest2), report);
    }
}

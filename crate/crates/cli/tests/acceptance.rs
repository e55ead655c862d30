//! Acceptance suite: ten end-to-end criteria, each reported on one line.
//! Runs without a harness so the summary always reaches the terminal.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use rca_core::config::PipelineConfig;
use rca_core::eval::{is_match, CaseResult, EvalResult};
use rca_core::fixtures::{
    category_of, corpus, generate_scenario, reference_case_scenario, synthesize, CaseCategory, Scenario, LOGS_FILE,
    NODE_METRICS_FILE, POD_METRICS_FILE, TRACES_FILE,
};
use rca_core::fusion::{EvidenceContext, Strategy};
use rca_core::ingest::{DatasetPaths, SpanRecord, TelemetryDataset};
use rca_core::log_analysis::{filter_error_logs, KeywordConfig};
use rca_core::metric_analysis::{pelt_change_points, DetectorConfig};
use rca_core::pipeline::{analyze, build_context, context_window, diagnose_paths, CaseAnalysis};
use rca_core::reasoner::{diagnose, parse_diagnosis, Diagnosis, MockBackend, ReasoningStep};
use rca_core::trace_analysis::build_call_trees;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- 1, 2: PELT

/// Unpruned optimal partitioning under an L2 cost computed directly from
/// each segment, with the penalty `mult · σ̂² · ln n` where σ̂ is the median
/// absolute successive difference over √2·0.6745 (population std when that
/// is zero).
fn oracle_change_points(values: &[f64], mult: f64, m: usize) -> Vec<usize> {
    let n = values.len();
    if n < 2 * m {
        return Vec::new();
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        let k = v.len();
        if k % 2 == 1 {
            v[k / 2]
        } else {
            (v[k / 2 - 1] + v[k / 2]) / 2.0
        }
    };
    let mut diffs: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let mut sigma = median(&mut diffs) / (2f64.sqrt() * 0.6745);
    if sigma <= 0.0 {
        let mean = values.iter().sum::<f64>() / n as f64;
        sigma = (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    }
    let penalty = mult * sigma * sigma * (n as f64).ln();
    if penalty <= 0.0 {
        return Vec::new();
    }
    let cost = |s: usize, t: usize| {
        let seg = &values[s..t];
        let mean = seg.iter().sum::<f64>() / seg.len() as f64;
        seg.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
    };
    let mut f = vec![f64::INFINITY; n + 1];
    let mut last = vec![0usize; n + 1];
    f[0] = -penalty;
    for t in m..=n {
        for s in (0..=t - m).filter(|&s| s == 0 || s >= m) {
            let v = f[s] + cost(s, t) + penalty;
            if v < f[t] - 1e-9 * v.abs().max(1.0) {
                f[t] = v;
                last[t] = s;
            }
        }
    }
    let mut cps = Vec::new();
    let mut t = n;
    while t > 0 {
        if last[t] > 0 {
            cps.push(last[t]);
        }
        t = last[t];
    }
    cps.reverse();
    cps
}

fn random_series(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rng.random_range(4..=50);
    let noise = |rng: &mut ChaCha8Rng, scale: f64| rng.random_range(-1.0..1.0) * scale;
    match rng.random_range(0..4) {
        0 => vec![rng.random_range(-50.0..50.0f64).round(); n],
        1 => {
            let cut = rng.random_range(2..n - 1);
            let (lo, hi) = (rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
            (0..n)
                .map(|i| if i < cut { lo } else { hi } + noise(rng, 0.8))
                .collect()
        }
        2 => {
            let slope = rng.random_range(-5.0..5.0);
            (0..n).map(|i| slope * i as f64 + noise(rng, 1.0)).collect()
        }
        _ => (0..n).map(|_| noise(rng, 100.0)).collect(),
    }
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let mut total_points = 0;
    for i in 0..200 {
        let values = random_series(&mut rng);
        let mult = [1.0, 2.0, 3.0, 5.0][rng.random_range(0..4)];
        let m = rng.random_range(2..=values.len().min(6) / 2);
        let cfg = DetectorConfig {
            pelt_penalty_multiplier: mult,
            min_segment_length: m,
            ..DetectorConfig::default()
        };
        let got = pelt_change_points(&values, &cfg).map_err(|e| format!("series {i}: {e}"))?;
        let want = oracle_change_points(&values, mult, m);
        check(got == want, || {
            format!("series {i} (n={}): got {got:?}, oracle {want:?}", values.len())
        })?;
        total_points += got.len();
    }
    let elapsed = start.elapsed();
    check(elapsed.as_secs_f64() < 10.0, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "200 series agree ({total_points} change points) in {elapsed:.2?}"
    ))
}

fn criterion_2() -> Outcome {
    let mut values = vec![0.0; 20];
    values.extend([10.0; 20]);
    let cps = pelt_change_points(&values, &DetectorConfig::default()).map_err(|e| e.to_string())?;
    check(cps == vec![20], || format!("got {cps:?}"))?;
    Ok("change points [20]".into())
}

// --------------------------------------------------------- 3: call trees

fn span(trace: &str, id: &str, parent: Option<&str>, pod: &str) -> SpanRecord {
    SpanRecord {
        trace_id: trace.into(),
        span_id: id.into(),
        parent_span_id: parent.map(String::from),
        service: pod.rsplit_once('-').map_or(pod, |(s, _)| s).into(),
        pod: pod.into(),
        start_time: 1_749_146_400_000_000,
        duration: 10,
        status_code: Some(0),
        tags: BTreeMap::new(),
    }
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut edges_checked = 0;
    for topo in 0..100 {
        let services: Vec<String> = (0..rng.random_range(2..12)).map(|i| format!("svc{topo}x{i}")).collect();
        let traces = rng.random_range(1..=4);
        let budget = rng.random_range(traces..=200);
        let mut groups: BTreeMap<String, Vec<SpanRecord>> = BTreeMap::new();
        let mut expected: BTreeSet<(String, String)> = BTreeSet::new();
        for t in 0..traces {
            let trace_id = format!("t{topo}-{t}");
            let size = (budget / traces).max(1);
            let mut spans: Vec<SpanRecord> = Vec::new();
            for i in 0..size {
                let id = format!("{:016x}", rng.random::<u64>());
                let pod = format!(
                    "{}-{}",
                    services[rng.random_range(0..services.len())],
                    rng.random_range(0..3)
                );
                let parent = (i > 0).then(|| spans[rng.random_range(0..i)].span_id.clone());
                if let Some(p) = &parent {
                    expected.insert((p.clone(), id.clone()));
                }
                spans.push(span(&trace_id, &id, parent.as_deref(), &pod));
            }
            spans.shuffle(&mut rng);
            groups.insert(trace_id, spans);
        }
        let (trees, warnings) = build_call_trees(&groups);
        check(warnings.is_empty(), || {
            format!("topology {topo}: unexpected warnings {warnings:?}")
        })?;
        let got: BTreeSet<(String, String)> = trees.iter().flat_map(|t| t.edges()).collect();
        check(got == expected, || format!("topology {topo}: edge sets differ"))?;
        edges_checked += expected.len();
    }

    // an orphan (parent outside the data) becomes a root of its own; a cycle
    // is cut with a warning and no span is lost
    let orphan = BTreeMap::from([(
        "o".to_string(),
        vec![
            span("o", "a", None, "frontend-0"),
            span("o", "b", Some("a"), "cartservice-0"),
            span("o", "c", Some("zz"), "cartservice-1"),
        ],
    )]);
    let (trees, warnings) = build_call_trees(&orphan);
    check(trees[0].roots.len() == 2 && warnings.is_empty(), || {
        format!("orphan: {} roots, {warnings:?}", trees[0].roots.len())
    })?;
    check(trees[0].edges() == BTreeSet::from([("a".into(), "b".into())]), || {
        "orphan: edge lost".into()
    })?;

    let cycle = BTreeMap::from([(
        "c".to_string(),
        vec![
            span("c", "x", Some("y"), "frontend-0"),
            span("c", "y", Some("x"), "cartservice-0"),
            span("c", "z", Some("y"), "adservice-0"),
        ],
    )]);
    let (trees, warnings) = build_call_trees(&cycle);
    let reachable: usize = trees[0].roots.iter().map(|&r| trees[0].subtree_size(r)).sum();
    check(reachable == 3 && !warnings.is_empty(), || {
        format!("cycle: {reachable} of 3 spans reachable")
    })?;
    Ok(format!(
        "100 topologies, {edges_checked} edges exact; orphan and cycle fixtures degrade cleanly"
    ))
}

// --------------------------------------------------------- 4: reference case

fn dir_paths(dir: &Path) -> DatasetPaths {
    let keep = |names: &[&str]| names.iter().map(|n| dir.join(n)).filter(|p| p.is_file()).collect();
    DatasetPaths {
        trace_paths: keep(&[TRACES_FILE]),
        metric_paths: keep(&[POD_METRICS_FILE, NODE_METRICS_FILE]),
        log_paths: keep(&[LOGS_FILE]),
    }
}

fn criterion_4() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let s = reference_case_scenario();
    let generated = generate_scenario(&s, dir.path()).map_err(|e| e.to_string())?;
    let out = diagnose_paths(
        &generated.paths,
        s.case_window,
        &PipelineConfig::default(),
        &MockBackend,
    )
    .map_err(|e| e.to_string())?;
    let d = &out.diagnosis;
    check(d.component == "cartservice", || format!("component {}", d.component))?;
    let actions: Vec<&str> = d.reasoning_trace.iter().map(|s| s.action.as_str()).collect();
    for needed in ["TraceAnalysis", "MetricsAnalysis", "LogSearch"] {
        check(actions.iter().any(|a| a.starts_with(needed)), || {
            format!("no {needed} step in {actions:?}")
        })?;
    }
    let obs: Vec<&str> = d.reasoning_trace.iter().map(|s| s.observation.as_str()).collect();
    Ok(format!("cartservice; {}", obs.join(" | ")))
}

// ------------------------------------------- 5, 6: strategies over a corpus

fn case_dataset(s: &Scenario) -> TelemetryDataset {
    let mut ds = synthesize(s).expect("corpus scenarios are valid").dataset;
    let ctx = context_window(s.case_window);
    ds.retain_window(&ctx);
    ds.context_window = ctx;
    ds.focus(s.case_window)
}

fn with_strategy(strategy: Strategy) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.fusion.strategy = strategy;
    cfg
}

fn run_strategy(s: &Scenario, a: &CaseAnalysis, strategy: Strategy) -> CaseResult {
    let cfg = with_strategy(strategy);
    let truth = s.truth().expect("corpus scenarios carry truth");
    let outcome = build_context(a, &cfg.fusion)
        .map_err(|e| e.to_string())
        .and_then(|c| diagnose(&c, &MockBackend).map_err(|e| e.to_string()));
    let (diagnosis, error) = match outcome {
        Ok(d) => (Some(d), None),
        Err(e) => (None, Some(e)),
    };
    CaseResult {
        case_id: s.id.clone(),
        window: s.case_window,
        predicted: diagnosis.as_ref().map(|d| d.component.clone()),
        correct: diagnosis.as_ref().is_some_and(|d| is_match(&d.component, &truth)),
        steps: diagnosis.as_ref().map_or(0, Diagnosis::steps),
        truth,
        error,
        diagnosis,
    }
}

struct CorpusRun {
    categories: BTreeMap<String, CaseCategory>,
    results: BTreeMap<Strategy, EvalResult>,
}

fn corpus_run(scenarios: &[Scenario]) -> CorpusRun {
    let per_scenario: Vec<Vec<(Strategy, CaseResult)>> = scenarios
        .par_iter()
        .map(|s| {
            let a = analyze(case_dataset(s), &PipelineConfig::default());
            Strategy::ALL.iter().map(|&st| (st, run_strategy(s, &a, st))).collect()
        })
        .collect();
    let mut by_strategy: BTreeMap<Strategy, Vec<CaseResult>> = BTreeMap::new();
    for (st, r) in per_scenario.into_iter().flatten() {
        by_strategy.entry(st).or_default().push(r);
    }
    CorpusRun {
        categories: scenarios.iter().map(|s| (s.id.clone(), category_of(s))).collect(),
        results: by_strategy
            .into_iter()
            .map(|(st, v)| (st, EvalResult::from_cases(st, v)))
            .collect(),
    }
}

fn subset_accuracy(run: &CorpusRun, st: Strategy, keep: impl Fn(CaseCategory) -> bool) -> (usize, usize) {
    let cases: Vec<&CaseResult> = run.results[&st]
        .per_case
        .iter()
        .filter(|c| keep(run.categories[&c.case_id]))
        .collect();
    (cases.iter().filter(|c| c.correct).count(), cases.len())
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let scenarios = corpus(2025, 100);
    let run = corpus_run(&scenarios);
    let acc: Vec<f64> = Strategy::ALL.iter().map(|s| run.results[s].accuracy).collect();
    let visible = subset_accuracy(&run, Strategy::Final, |c| c != CaseCategory::MetricsOnly);
    let mo_final = subset_accuracy(&run, Strategy::Final, |c| c == CaseCategory::MetricsOnly);
    let mo_inter = subset_accuracy(&run, Strategy::Intermediate, |c| c == CaseCategory::MetricsOnly);
    let elapsed = start.elapsed();
    let summary = format!(
        "original {:.2} < early {:.2} < intermediate {:.2} < final {:.2}; final on visible {}/{}; metrics-only final {}/{} vs intermediate {}/{}; {elapsed:.1?}",
        acc[0], acc[1], acc[2], acc[3], visible.0, visible.1, mo_final.0, mo_final.1, mo_inter.0, mo_inter.1
    );
    check(acc.windows(2).all(|w| w[0] < w[1]), || {
        format!("ordering violated: {summary}")
    })?;
    check(visible.0 as f64 >= 0.9 * visible.1 as f64, || {
        format!("visible accuracy too low: {summary}")
    })?;
    check(mo_final.0 > mo_inter.0, || format!("metrics-only subset: {summary}"))?;
    check(elapsed.as_secs() < 300, || format!("too slow: {summary}"))?;
    Ok(summary)
}

fn uncut(strategy: Strategy) -> PipelineConfig {
    let mut cfg = with_strategy(strategy);
    cfg.fusion.top_k = usize::MAX;
    cfg.fusion.max_context_chars = usize::MAX;
    cfg
}

fn residual_holds(inter: &EvidenceContext, fin: &EvidenceContext) -> Result<(), String> {
    for b in &inter.bundles {
        for c in std::iter::once(&b.component).chain(&b.members) {
            let f = fin
                .bundles
                .iter()
                .find(|f| f.covers(c))
                .ok_or_else(|| format!("{} missing from final", c.name))?;
            if let Some(t) = &b.trace_evidence {
                let ft = f
                    .trace_evidence
                    .as_ref()
                    .ok_or_else(|| format!("{} lost its trace evidence", c.name))?;
                check(
                    ft.error_count >= t.error_count && t.pods.iter().all(|p| ft.pods.contains(p)),
                    || format!("{} trace evidence shrank", c.name),
                )?;
            }
        }
    }
    Ok(())
}

fn criterion_6() -> Outcome {
    let mut scenarios = corpus(2025, 100);
    scenarios.push(reference_case_scenario());
    let checked: Vec<Result<usize, String>> = scenarios
        .par_iter()
        .map(|s| {
            let a = analyze(case_dataset(s), &PipelineConfig::default());
            let inter = match build_context(&a, &uncut(Strategy::Intermediate).fusion) {
                Ok(c) => c,
                Err(_) => return Ok(0),
            };
            let fin = build_context(&a, &uncut(Strategy::Final).fusion).map_err(|e| format!("{}: {e}", s.id))?;
            residual_holds(&inter, &fin).map_err(|e| format!("{}: {e}", s.id))?;
            Ok(inter.bundles.len())
        })
        .collect();
    let bundles: usize = checked.into_iter().collect::<Result<Vec<_>, _>>()?.into_iter().sum();
    Ok(format!(
        "{} scenarios, {bundles} intermediate bundles all kept with trace evidence",
        scenarios.len()
    ))
}

// ------------------------------------------------ 7: missing modalities

fn criterion_7() -> Outcome {
    let mut scenarios: Vec<Scenario> = corpus(77, 12);
    scenarios.push(reference_case_scenario());
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let drops: [&[&str]; 6] = [
        &[TRACES_FILE],
        &[POD_METRICS_FILE, NODE_METRICS_FILE],
        &[LOGS_FILE],
        &[TRACES_FILE, LOGS_FILE],
        &[POD_METRICS_FILE, NODE_METRICS_FILE, LOGS_FILE],
        &[TRACES_FILE, POD_METRICS_FILE, NODE_METRICS_FILE],
    ];
    let tallies: Vec<Result<(usize, usize), String>> = scenarios
        .par_iter()
        .flat_map(|s| drops.par_iter().map(move |d| (s, *d)))
        .map(|(s, drop)| {
            let dir = root.path().join(format!("{}-{}", s.id, drop.join("+")));
            generate_scenario(s, &dir).map_err(|e| e.to_string())?;
            for f in drop {
                let _ = std::fs::remove_file(dir.join(f));
            }
            let paths = dir_paths(&dir);
            let res = catch_unwind(AssertUnwindSafe(|| {
                diagnose_paths(&paths, s.case_window, &PipelineConfig::default(), &MockBackend)
            }))
            .map_err(|_| format!("{} without {drop:?}: panicked", s.id))?;
            match res {
                Ok(_) => Ok((1, 0)),
                Err(e) if e.is_no_evidence() => Ok((0, 1)),
                Err(e) => Err(format!("{} without {drop:?}: {e}", s.id)),
            }
        })
        .collect();
    let (mut diagnosed, mut none) = (0, 0);
    for t in tallies {
        let (d, n) = t?;
        diagnosed += d;
        none += n;
    }
    Ok(format!(
        "{} runs: {diagnosed} diagnoses, {none} typed NoEvidence, 0 crashes",
        diagnosed + none
    ))
}

// --------------------------------------------------- 8: determinism

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let s = reference_case_scenario();
    let g = generate_scenario(&s, dir.path()).map_err(|e| e.to_string())?;
    let run = || {
        Command::new(env!("CARGO_BIN_EXE_rca"))
            .args(["--seed", "7", "diagnose", "--manifest"])
            .arg(&g.manifest)
            .args(["--case", &s.id])
            .output()
            .map_err(|e| e.to_string())
    };
    let a = run()?;
    let b = run()?;
    check(a.status.success(), || String::from_utf8_lossy(&a.stderr).into_owned())?;
    check(!a.stdout.is_empty() && a.stdout == b.stdout, || {
        "stdout differs between runs".into()
    })?;
    Ok(format!("{} identical bytes", a.stdout.len()))
}

// ---------------------------------------------------- 9: parser fuzz

fn reference_diagnosis() -> Diagnosis {
    let step = |step, action: &str, observation: &str| ReasoningStep {
        step,
        action: action.into(),
        observation: observation.into(),
    };
    Diagnosis {
        component: "cartservice".into(),
        reason: "response timeout with RRT spike to 97k ms".into(),
        reasoning_trace: vec![
            step(1, "TraceAnalysis(Tracedata)", "3 cartservice pods showing errors"),
            step(2, "MetricsAnalysis(cartservice)", "RRT spike to 97246ms at fault time"),
            step(3, "LogSearch(cartservice)", "40 errors detected at faultpeak"),
            step(4, "AnalyzeAPM(cartservice)", "23.12% error ratio at 18:10"),
        ],
    }
}

const REFERENCE_JSON: &str = r#"{"component": "cartservice", "reason": "response timeout with RRT spike to 97k ms", "reasoning_trace": [
{"step":1,"action": "TraceAnalysis(Tracedata)", "observation": "3 cartservice pods showing errors"},
{"step":2,"action":"MetricsAnalysis(cartservice)","observation":"RRT spike to 97246ms at fault time"},
{"step":3,"action": "LogSearch(cartservice)", "observation": "40 errors detected at faultpeak"},
{"step":4,"action": "AnalyzeAPM(cartservice)", "observation": "23.12% error ratio at 18:10"}]}"#;

const REFERENCE_LABELED: &str = r#"component: cartservice
reason: response timeout with RRT spike to 97k ms
reasoning trace:[
{"step":1,"action": "TraceAnalysis(Tracedata)", "observation": "3 cartservice pods showing errors"}
{"step":2,"action":"MetricsAnalysis(cartservice)","observation":"RRT spike to 97246ms at fault time"}
{"step":3,"action": "LogSearch(cartservice)", "observation": "40 errors detected at faultpeak"}
{"step":4,"action": "AnalyzeAPM(cartservice)", "observation": "23.12% error ratio at 18:10"}]"#;

fn mutate(rng: &mut ChaCha8Rng, base: &str) -> String {
    const NOISE: &[char] = &[
        '{', '}', '[', ']', '"', ':', ',', '\\', '\n', ' ', 'x', '0', '-', 'é', '\u{0}', '🙂',
    ];
    let mut chars: Vec<char> = base.chars().collect();
    for _ in 0..rng.random_range(1..12) {
        let len = chars.len();
        match rng.random_range(0..5) {
            0 if len > 0 => {
                chars.remove(rng.random_range(0..len));
            }
            1 => chars.insert(rng.random_range(0..=len), NOISE[rng.random_range(0..NOISE.len())]),
            2 if len > 0 => chars[rng.random_range(0..len)] = NOISE[rng.random_range(0..NOISE.len())],
            3 if len > 0 => chars.truncate(rng.random_range(0..len)),
            _ if len > 1 => {
                let a = rng.random_range(0..len);
                let b = rng.random_range(a..len);
                let piece: Vec<char> = chars[a..=b.min(len - 1)].to_vec();
                let at = rng.random_range(0..=chars.len());
                chars.splice(at..at, piece);
            }
            _ => {}
        }
    }
    chars.into_iter().collect()
}

fn criterion_9() -> Outcome {
    let want = reference_diagnosis();
    for (name, text) in [("json", REFERENCE_JSON), ("labeled", REFERENCE_LABELED)] {
        let got = parse_diagnosis(text).map_err(|e| format!("{name}: {e}"))?;
        check(got == want, || format!("{name} layout parsed to {got:?}"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut parsed = 0;
    for i in 0..10_000 {
        let input = match i % 4 {
            0 => (0..rng.random_range(0..200))
                .map(|_| char::from_u32(rng.random_range(0..0x3000)).unwrap_or('?'))
                .collect(),
            1 => mutate(&mut rng, REFERENCE_JSON),
            2 => mutate(&mut rng, REFERENCE_LABELED),
            _ => format!(
                "Sure! Here is the answer:\n```json\n{}\n```",
                mutate(&mut rng, REFERENCE_JSON)
            ),
        };
        let r = catch_unwind(|| parse_diagnosis(&input)).map_err(|_| format!("panicked on input {i}: {input:?}"))?;
        parsed += usize::from(r.is_ok());
    }
    Ok(format!(
        "10000 inputs, 0 panics ({parsed} parsed); reference JSON and labeled layouts exact"
    ))
}

// ------------------------------------------------- 10: log exactness

fn criterion_10() -> Outcome {
    let mut scenarios: Vec<Scenario> = corpus(2025, 100);
    scenarios.push(reference_case_scenario());
    let checked: Vec<Result<u64, String>> = scenarios
        .par_iter()
        .map(|s| {
            let synth = synthesize(s).map_err(|e| e.to_string())?;
            let pre = rca_core::preprocess::preprocess(synth.dataset.focus(s.case_window));
            let groups = pre.logs_in_case_window();
            for cap in [1, 7, 50, 100_000] {
                let cfg = KeywordConfig {
                    max_entries_per_component: cap,
                    ..KeywordConfig::default()
                };
                let rep = filter_error_logs(&groups, &cfg);
                let got: BTreeMap<String, u64> = rep
                    .per_component_count
                    .iter()
                    .map(|(c, n)| (c.name.clone(), *n))
                    .collect();
                check(got == synth.injected_error_logs, || {
                    format!(
                        "{} cap {cap}: counted {got:?}, injected {:?}",
                        s.id, synth.injected_error_logs
                    )
                })?;
            }
            Ok(synth.injected_error_logs.values().sum())
        })
        .collect();
    let total: u64 = checked.into_iter().collect::<Result<Vec<_>, _>>()?.into_iter().sum();

    let s = reference_case_scenario();
    let a = analyze(case_dataset(&s), &PipelineConfig::default());
    let d = diagnose(
        &build_context(&a, &with_strategy(Strategy::Final).fusion).map_err(|e| e.to_string())?,
        &MockBackend,
    )
    .map_err(|e| e.to_string())?;
    let log_step = d
        .reasoning_trace
        .iter()
        .find(|s| s.action.starts_with("LogSearch"))
        .ok_or("no LogSearch step")?;
    check(log_step.observation.starts_with("40 errors"), || {
        log_step.observation.clone()
    })?;
    Ok(format!(
        "{total} injected lines over {} scenarios recovered at caps 1/7/50/100000; reference case reports 40",
        scenarios.len()
    ))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("PELT matches the unpruned optimum", criterion_1),
        ("20+20 step splits at index 20", criterion_2),
        ("call trees rebuild generator edges", criterion_3),
        ("reference case diagnosed as cartservice", criterion_4),
        ("strategy ordering on 100 scenarios", criterion_5),
        ("intermediate evidence survives into final", criterion_6),
        ("missing modalities never crash", criterion_7),
        ("diagnose output is byte-identical", criterion_8),
        ("parser never panics", criterion_9),
        ("injected error logs counted exactly", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(run).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} of {} criteria pass",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

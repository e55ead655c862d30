//! Context invariants across strategies, cuts and budgets on synthetic cases.

use rca_core::config::PipelineConfig;
use rca_core::fixtures::{corpus, reference_case_scenario, synthesize};
use rca_core::fusion::{FusionConfig, Strategy, MIN_CONTEXT_CHARS};
use rca_core::pipeline::{analyze, build_context, CaseAnalysis};
use rca_core::reasoner::{build_prompt, diagnose, MockBackend};

fn analyses() -> Vec<CaseAnalysis> {
    let cfg = PipelineConfig::default();
    let mut scenarios = corpus(11, 8);
    scenarios.push(reference_case_scenario());
    scenarios
        .iter()
        .map(|s| {
            let data = synthesize(s).unwrap().dataset.focus(s.case_window);
            analyze(data, &cfg)
        })
        .collect()
}

#[test]
fn bundles_are_ranked_cut_and_scored() {
    for a in analyses() {
        for strategy in [Strategy::Early, Strategy::Intermediate, Strategy::Final] {
            for top_k in [1, 2, 5, 50] {
                let cfg = FusionConfig {
                    strategy,
                    top_k,
                    ..FusionConfig::default()
                };
                let Ok(ctx) = build_context(&a, &cfg) else { continue };
                assert!(ctx.bundles.len() <= top_k);
                assert!(ctx.total_bundles >= ctx.bundles.len());
                assert_eq!(ctx.bundles.len(), ctx.total_bundles.min(top_k));
                for pair in ctx.bundles.windows(2) {
                    let (x, y) = (&pair[0], &pair[1]);
                    assert!(x.score > y.score || (x.score == y.score && x.component.name <= y.component.name));
                }
                for b in &ctx.bundles {
                    assert!(b.has_evidence());
                    let expected = b.compute_score(&cfg);
                    assert!((b.score - expected).abs() <= 1e-9 * expected.abs().max(1.0));
                }
                let names: std::collections::BTreeSet<_> = ctx.bundles.iter().map(|b| &b.component).collect();
                assert_eq!(names.len(), ctx.bundles.len(), "duplicate bundle");
            }
        }
    }
}

#[test]
fn wider_cut_keeps_the_narrow_prefix() {
    for a in analyses() {
        let narrow = build_context(
            &a,
            &FusionConfig {
                top_k: 2,
                ..FusionConfig::default()
            },
        )
        .unwrap();
        let wide = build_context(
            &a,
            &FusionConfig {
                top_k: 20,
                ..FusionConfig::default()
            },
        )
        .unwrap();
        let n: Vec<_> = narrow.bundles.iter().map(|b| &b.component).collect();
        let w: Vec<_> = wide.bundles.iter().take(n.len()).map(|b| &b.component).collect();
        assert_eq!(n, w);
    }
}

#[test]
fn every_budget_is_respected() {
    for a in analyses() {
        for strategy in [Strategy::Original, Strategy::Final] {
            for budget in [MIN_CONTEXT_CHARS, 1_500, 4_000, 12_000] {
                let cfg = FusionConfig {
                    strategy,
                    max_context_chars: budget,
                    top_k: 50,
                    ..FusionConfig::default()
                };
                let ctx = build_context(&a, &cfg).unwrap();
                assert!(ctx.char_len() <= budget, "{strategy} {budget}: {}", ctx.char_len());
                diagnose(&ctx, &MockBackend).unwrap();
            }
        }
    }
}

#[test]
fn context_is_deterministic() {
    let a = analyses();
    let b = analyses();
    for (x, y) in a.iter().zip(&b) {
        let cfg = FusionConfig::default();
        let cx = build_context(x, &cfg).unwrap();
        let cy = build_context(y, &cfg).unwrap();
        assert_eq!(build_prompt(&cx).unwrap(), build_prompt(&cy).unwrap());
    }
}

//! The prompt and mock reply for the reference cartservice case are pinned
//! byte for byte. Set `UPDATE_GOLDEN=1` to rewrite them after an intended
//! change.

use std::path::PathBuf;

use rca_core::config::PipelineConfig;
use rca_core::fixtures::{reference_case_scenario, synthesize};
use rca_core::pipeline::{analyze, build_context};
use rca_core::reasoner::{build_prompt, infer, MockBackend};

fn check(name: &str, actual: &str) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(
        expected == actual,
        "{name} changed; rerun with UPDATE_GOLDEN=1 if intended"
    );
}

#[test]
fn reference_case_prompt_and_reply() {
    let s = reference_case_scenario();
    let data = synthesize(&s).unwrap().dataset.focus(s.case_window);
    let analysis = analyze(data, &PipelineConfig::default());
    let ctx = build_context(&analysis, &Default::default()).unwrap();
    let prompt = build_prompt(&ctx).unwrap();
    check("reference_case_prompt.txt", &prompt);
    check("reference_case_reply.txt", &infer(&prompt, &ctx, &MockBackend).unwrap());
}

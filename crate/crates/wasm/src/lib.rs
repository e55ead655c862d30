//! Browser bindings: change points, robust z-scores and a diagnosis of a
//! synthetic fault, all computed locally with the mock reasoner.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use rca_core::component::ComponentId;
use rca_core::config::PipelineConfig;
use rca_core::fixtures::{synthesize, FaultKind, FaultSpec, Scenario};
use rca_core::fusion::Strategy;
use rca_core::metric_analysis::robust::robust_scores;
use rca_core::metric_analysis::{pelt_change_points, DetectorConfig};
use rca_core::pipeline::diagnose_dataset;
use rca_core::reasoner::MockBackend;
use rca_core::time::TimeWindow;

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data serializes")
}

fn js(e: String) -> JsError {
    JsError::new(&e)
}

/// PELT change points (indices where a new segment starts).
#[wasm_bindgen]
pub fn detect_change_points(
    values: Vec<f64>,
    penalty_multiplier: f64,
    min_segment: usize,
) -> Result<Vec<u32>, JsError> {
    change_points(&values, penalty_multiplier, min_segment).map_err(js)
}

pub fn change_points(values: &[f64], penalty_multiplier: f64, min_segment: usize) -> Result<Vec<u32>, String> {
    let cfg = DetectorConfig {
        pelt_penalty_multiplier: penalty_multiplier,
        min_segment_length: min_segment,
        ..DetectorConfig::default()
    };
    cfg.validate().map_err(|e| e.to_string())?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err("values must be finite numbers".into());
    }
    let points = pelt_change_points(values, &cfg).map_err(|e| e.to_string())?;
    Ok(points.into_iter().map(|p| p as u32).collect())
}

#[derive(Serialize)]
struct ZScores {
    median: f64,
    mad: f64,
    z: Vec<f64>,
    flagged: Vec<usize>,
}

/// Robust z-scores as JSON: `{median, mad, z, flagged}`.
#[wasm_bindgen]
pub fn robust_zscores(values: Vec<f64>, z_threshold: f64) -> Result<String, JsError> {
    zscores(&values, z_threshold).map_err(js)
}

pub fn zscores(values: &[f64], z_threshold: f64) -> Result<String, String> {
    if values.is_empty() {
        return Err("need at least one value".into());
    }
    if values.iter().any(|v| !v.is_finite()) || !(z_threshold.is_finite() && z_threshold > 0.0) {
        return Err("values must be finite and the threshold positive".into());
    }
    let s = robust_scores(values);
    let flagged = (0..values.len()).filter(|&i| s.flagged(i, z_threshold)).collect();
    Ok(to_json(&ZScores {
        median: s.median,
        mad: s.mad,
        z: s.z,
        flagged,
    }))
}

fn parse_kind(name: &str) -> Result<FaultKind, String> {
    FaultKind::ALL
        .into_iter()
        .find(|k| k.as_str() == name)
        .ok_or_else(|| format!("unknown fault kind {name:?}"))
}

/// Synthesizes one hour of telemetry with a fault on `target` (a service
/// such as `cartservice` or a pod such as `cartservice-1`), then diagnoses
/// it. Returns JSON `{truth, diagnosis, context}`.
#[wasm_bindgen]
pub fn diagnose_scenario(
    target: &str,
    fault_kind: &str,
    magnitude: f64,
    grpc_visible: bool,
    strategy: &str,
    seed: u64,
) -> Result<String, JsError> {
    run_scenario(target, fault_kind, magnitude, grpc_visible, strategy, seed).map_err(js)
}

pub fn run_scenario(
    target: &str,
    fault_kind: &str,
    magnitude: f64,
    grpc_visible: bool,
    strategy: &str,
    seed: u64,
) -> Result<String, String> {
    let kind = parse_kind(fault_kind)?;
    let strategy: Strategy = strategy.parse()?;
    let target = target.trim();
    let target = if target
        .rsplit_once('-')
        .is_some_and(|(_, n)| !n.is_empty() && n.chars().all(|c| c.is_ascii_digit()))
    {
        ComponentId::pod(target)
    } else {
        ComponentId::service(target)
    };
    let hour = 1_749_146_400;
    let span = TimeWindow::new(hour, hour + 3600).expect("hour");
    let case_window = TimeWindow::new(hour + 600, hour + 2040).expect("case");
    let fault_window = TimeWindow::new(hour + 600, hour + 1080).expect("fault");
    let fault = |kind, magnitude, grpc_visible| FaultSpec {
        target: target.clone(),
        kind,
        window: fault_window,
        magnitude,
        grpc_visible,
    };
    let mut faults = vec![fault(kind, magnitude, grpc_visible)];
    if kind != FaultKind::LogBurst {
        faults.push(fault(FaultKind::LogBurst, 20.0, false));
    }
    let scenario = Scenario::new("demo", seed, span, case_window, faults);
    scenario.validate().map_err(|e| e.to_string())?;
    let synth = synthesize(&scenario).map_err(|e| e.to_string())?;

    let mut cfg = PipelineConfig {
        parallelism: 1,
        ..PipelineConfig::default()
    };
    cfg.fusion.strategy = strategy;
    let dataset = synth.dataset.focus(case_window);
    let outcome = diagnose_dataset(dataset, &cfg, &MockBackend).map_err(|e| e.to_string())?;
    Ok(to_json(&serde_json::json!({
        "truth": synth.truth,
        "diagnosis": outcome.diagnosis,
        "context": outcome.context.render(),
    })))
}

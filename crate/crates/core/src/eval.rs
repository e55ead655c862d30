//! Accuracy and reasoning-step evaluation over a corpus of cases.
//!
//! A prediction is correct when it names the ground-truth component, or a pod
//! of a ground-truth service. Cases that fail (no evidence, backend errors)
//! count as incorrect; average steps are taken over diagnosed cases only.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::component::{derive_service, ComponentLevel};
use crate::config::PipelineConfig;
use crate::fixtures::{synthesize, GroundTruth, Scenario};
use crate::fusion::Strategy;
use crate::ingest::DatasetPaths;
use crate::pipeline::{context_window, diagnose_dataset, PipelineError};
use crate::reasoner::{normalize_component, Backend, Diagnosis};
use crate::time::{format_secs, TimeWindow};

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("case id {0} appears more than once")]
    DuplicateCase(String),
    #[error("case {case_id}: {detail}")]
    MissingCase { case_id: String, detail: String },
    #[error("manifest has no cases")]
    Empty,
    #[error("cannot read manifest {path}: {detail}")]
    Unreadable { path: PathBuf, detail: String },
}

/// One labeled case: a dataset on disk or an inline scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSpec {
    pub case_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetPaths>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Scenario>,
    pub window: TimeWindow,
    pub ground_truth: GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseManifest {
    pub cases: Vec<CaseSpec>,
}

impl CaseManifest {
    /// Reads a JSON manifest; relative dataset paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let unreadable = |detail: String| ManifestError::Unreadable {
            path: path.to_path_buf(),
            detail,
        };
        let text = std::fs::read_to_string(path).map_err(|e| unreadable(e.to_string()))?;
        let mut manifest: CaseManifest = serde_json::from_str(&text).map_err(|e| unreadable(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for case in &mut manifest.cases {
            if let Some(d) = &mut case.dataset {
                for p in d
                    .trace_paths
                    .iter_mut()
                    .chain(&mut d.metric_paths)
                    .chain(&mut d.log_paths)
                {
                    if p.is_relative() {
                        *p = base.join(&*p);
                    }
                }
            }
        }
        Ok(manifest)
    }

    pub fn from_scenarios(scenarios: &[Scenario]) -> Self {
        Self {
            cases: scenarios
                .iter()
                .map(|s| CaseSpec {
                    case_id: s.id.clone(),
                    dataset: None,
                    scenario: Some(s.clone()),
                    window: s.case_window,
                    ground_truth: s.truth().expect("scenario with faults"),
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        if self.cases.is_empty() {
            return Err(ManifestError::Empty);
        }
        let mut seen = BTreeSet::new();
        for case in &self.cases {
            if !seen.insert(case.case_id.as_str()) {
                return Err(ManifestError::DuplicateCase(case.case_id.clone()));
            }
            let missing = |detail: String| ManifestError::MissingCase {
                case_id: case.case_id.clone(),
                detail,
            };
            match (&case.dataset, &case.scenario) {
                (Some(d), None) => {
                    let all: Vec<&PathBuf> = d
                        .trace_paths
                        .iter()
                        .chain(&d.metric_paths)
                        .chain(&d.log_paths)
                        .collect();
                    if all.is_empty() {
                        return Err(missing("dataset lists no files".into()));
                    }
                    if let Some(p) = all.iter().find(|p| !p.is_file()) {
                        return Err(missing(format!("{} does not exist", p.display())));
                    }
                }
                (None, Some(s)) => s.validate().map_err(|e| missing(e.to_string()))?,
                _ => return Err(missing("needs exactly one of `dataset` or `scenario`".into())),
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case_id: String,
    pub window: TimeWindow,
    pub truth: GroundTruth,
    pub predicted: Option<String>,
    pub correct: bool,
    pub steps: usize,
    pub error: Option<String>,
    pub diagnosis: Option<Diagnosis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub strategy: Strategy,
    pub accuracy: f64,
    pub avg_steps: f64,
    pub cases: usize,
    pub correct: usize,
    pub diagnosed: usize,
    pub per_case: Vec<CaseResult>,
}

impl EvalResult {
    /// Aggregates per-case results, sorting them by case id.
    pub fn from_cases(strategy: Strategy, mut per_case: Vec<CaseResult>) -> Self {
        per_case.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        let cases = per_case.len();
        let correct = per_case.iter().filter(|c| c.correct).count();
        let diagnosed: Vec<usize> = per_case
            .iter()
            .filter(|c| c.diagnosis.is_some())
            .map(|c| c.steps)
            .collect();
        Self {
            strategy,
            accuracy: if cases == 0 { 0.0 } else { correct as f64 / cases as f64 },
            avg_steps: if diagnosed.is_empty() {
                0.0
            } else {
                diagnosed.iter().sum::<usize>() as f64 / diagnosed.len() as f64
            },
            cases,
            correct,
            diagnosed: diagnosed.len(),
            per_case,
        }
    }
}

/// Exact match, or a pod of the ground-truth service.
pub fn is_match(predicted: &str, truth: &GroundTruth) -> bool {
    let Ok(p) = normalize_component(predicted) else {
        return false;
    };
    let t = truth.component.trim().to_lowercase();
    p == t || (truth.level == ComponentLevel::Service && derive_service(&p) == t)
}

fn case_dataset(case: &CaseSpec) -> Result<crate::ingest::TelemetryDataset, PipelineError> {
    match (&case.scenario, &case.dataset) {
        (Some(s), _) => {
            let mut ds = synthesize(s)
                .map_err(|e| PipelineError::Config(crate::config::ConfigError(e.to_string())))?
                .dataset;
            ds.retain_window(&context_window(case.window));
            ds.context_window = context_window(case.window);
            Ok(ds.focus(case.window))
        }
        #[cfg(feature = "parquet")]
        (None, Some(paths)) => Ok(crate::pipeline::load_case(paths, case.window)?),
        _ => Err(PipelineError::Ingest(crate::ingest::IngestError::InvalidPaths(
            "this build cannot read dataset files".into(),
        ))),
    }
}

/// Runs one case; failures become incorrect results.
pub fn run_case(case: &CaseSpec, cfg: &PipelineConfig, backend: &dyn Backend) -> CaseResult {
    let outcome = case_dataset(case).and_then(|ds| diagnose_dataset(ds, cfg, backend));
    let (diagnosis, error) = match outcome {
        Ok(o) => (Some(o.diagnosis), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let predicted = diagnosis.as_ref().map(|d| d.component.clone());
    CaseResult {
        case_id: case.case_id.clone(),
        window: case.window,
        truth: case.ground_truth.clone(),
        correct: predicted.as_deref().is_some_and(|p| is_match(p, &case.ground_truth)),
        steps: diagnosis.as_ref().map_or(0, Diagnosis::steps),
        predicted,
        error,
        diagnosis,
    }
}

/// Evaluates every case under `cfg.fusion.strategy` on the current rayon pool.
pub fn run_eval(
    manifest: &CaseManifest,
    cfg: &PipelineConfig,
    backend: &dyn Backend,
) -> Result<EvalResult, ManifestError> {
    manifest.validate()?;
    let per_case: Vec<CaseResult> = manifest.cases.par_iter().map(|c| run_case(c, cfg, backend)).collect();
    Ok(EvalResult::from_cases(cfg.fusion.strategy, per_case))
}

/// Human-readable case report: question, ground truth, prediction and the
/// labeled reasoning trace, then the diagnosis JSON on one line.
pub fn render_case_report(r: &CaseResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "case: {}", r.case_id);
    let _ = writeln!(
        out,
        "question: A fault occurred from {} to {}. Please identify the root cause.",
        format_secs(r.window.start()),
        format_secs(r.window.end())
    );
    let _ = writeln!(out, "ground truth:");
    let _ = writeln!(out, "  component: {} ({})", r.truth.component, r.truth.level);
    let _ = writeln!(out, "  fault: {}", r.truth.fault_description.join("; "));
    let keys: Vec<&str> = r.truth.key_metrics.iter().map(|m| m.as_str()).collect();
    let _ = writeln!(
        out,
        "  key metrics: {}",
        if keys.is_empty() {
            "none".into()
        } else {
            keys.join(", ")
        }
    );
    match &r.diagnosis {
        Some(d) => {
            let verdict = if r.correct { "correct" } else { "incorrect" };
            let _ = writeln!(out, "prediction ({verdict}):");
            let _ = writeln!(out, "component: {}", d.component);
            let _ = writeln!(out, "reason: {}", d.reason);
            out.push_str("reasoning trace:[\n");
            let lines: Vec<String> = d
                .reasoning_trace
                .iter()
                .map(|s| serde_json::to_string(s).expect("step serializes"))
                .collect();
            out.push_str(&lines.join("\n"));
            out.push_str("]\n");
            let _ = writeln!(
                out,
                "diagnosis json: {}",
                serde_json::to_string(d).expect("diagnosis serializes")
            );
        }
        None => {
            let _ = writeln!(out, "prediction: none");
            let _ = writeln!(out, "error: {}", r.error.as_deref().unwrap_or("unknown failure"));
        }
    }
    out
}

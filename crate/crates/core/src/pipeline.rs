//! End-to-end composition: load, preprocess, analyze, fuse, reason.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, PipelineConfig};
use crate::fusion::{apply_strategy, AnalysisReports, EvidenceContext, FusionConfig, FusionError};
use crate::ingest::{IngestError, TelemetryDataset};
use crate::log_analysis::filter_error_logs;
use crate::metric_analysis::analyze_metrics;
use crate::preprocess::{preprocess, PreprocessedDataset};
use crate::reasoner::{diagnose, Backend, Diagnosis, ReasonerError};
use crate::time::TimeWindow;
use crate::trace_analysis::{build_call_trees, detect_trace_anomalies};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Reasoner(#[from] ReasonerError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

impl PipelineError {
    pub fn is_no_evidence(&self) -> bool {
        matches!(
            self,
            PipelineError::Fusion(FusionError::NoEvidence) | PipelineError::Reasoner(ReasonerError::EmptyContext)
        )
    }
}

/// The whole UTC hours overlapping `case`; metric baselines come from these.
pub fn context_window(case: TimeWindow) -> TimeWindow {
    let start = case.start().div_euclid(3600) * 3600;
    let end = (case.end() + 3599).div_euclid(3600) * 3600;
    TimeWindow::new(start, end).expect("non-empty case window")
}

/// Loads the context hours around `case` and focuses the dataset on it.
#[cfg(feature = "parquet")]
pub fn load_case(paths: &crate::ingest::DatasetPaths, case: TimeWindow) -> Result<TelemetryDataset, IngestError> {
    Ok(crate::ingest::load_dataset(paths, context_window(case))?.focus(case))
}

/// Preprocessed data plus the three analyzer reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseAnalysis {
    pub pre: PreprocessedDataset,
    pub reports: AnalysisReports,
    /// Call-tree repair notes (orphans, cycles, duplicates).
    pub trace_warnings: Vec<String>,
}

/// Runs every analyzer over the case window.
pub fn analyze(dataset: TelemetryDataset, cfg: &PipelineConfig) -> CaseAnalysis {
    let pre = preprocess(dataset);
    let (trees, trace_warnings) = build_call_trees(&pre.traces_in_case_window());
    let trace = detect_trace_anomalies(&trees);
    let metric = analyze_metrics(&pre, &cfg.detector);
    let log = filter_error_logs(&pre.logs_in_case_window(), &cfg.keywords);
    tracing::debug!(
        candidates = trace.candidate_components.len(),
        metric_anomalies = metric.anomalies.len(),
        log_matches = log.total_count(),
        "analysis done"
    );
    CaseAnalysis {
        pre,
        reports: AnalysisReports { trace, metric, log },
        trace_warnings,
    }
}

pub fn build_context(analysis: &CaseAnalysis, cfg: &FusionConfig) -> Result<EvidenceContext, FusionError> {
    apply_strategy(&analysis.pre, &analysis.reports, cfg)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub diagnosis: Diagnosis,
    pub context: EvidenceContext,
}

/// Analyzes an in-memory dataset and asks `backend` for a diagnosis.
pub fn diagnose_dataset(
    dataset: TelemetryDataset,
    cfg: &PipelineConfig,
    backend: &dyn Backend,
) -> Result<CaseOutcome, PipelineError> {
    cfg.validate()?;
    let analysis = analyze(dataset, cfg);
    let context = build_context(&analysis, &cfg.fusion)?;
    let diagnosis = diagnose(&context, backend)?;
    Ok(CaseOutcome { diagnosis, context })
}

#[cfg(feature = "parquet")]
pub fn diagnose_paths(
    paths: &crate::ingest::DatasetPaths,
    case: TimeWindow,
    cfg: &PipelineConfig,
    backend: &dyn Backend,
) -> Result<CaseOutcome, PipelineError> {
    cfg.validate()?;
    let dataset = load_case(paths, case)?;
    diagnose_dataset(dataset, cfg, backend)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{reference_case_scenario, synthesize};
    use crate::reasoner::MockBackend;

    #[test]
    fn context_hours() {
        let w = TimeWindow::new(3600 * 10 + 605, 3600 * 10 + 2045).unwrap();
        assert_eq!(context_window(w), TimeWindow::new(36_000, 39_600).unwrap());
        let straddle = TimeWindow::new(3600 * 10 + 3000, 3600 * 11 + 10).unwrap();
        assert_eq!(context_window(straddle), TimeWindow::new(36_000, 43_200).unwrap());
    }

    #[test]
    fn reference_case_in_memory() {
        let s = reference_case_scenario();
        let ds = synthesize(&s).unwrap().dataset;
        let out = diagnose_dataset(ds, &PipelineConfig::default(), &MockBackend).unwrap();
        assert_eq!(out.diagnosis.component, "cartservice");
    }

    #[test]
    fn analysis_round_trips_through_json() {
        let ds = synthesize(&reference_case_scenario()).unwrap().dataset;
        let a = analyze(ds, &PipelineConfig::default());
        let text = serde_json::to_string(&a).unwrap();
        let back: CaseAnalysis = serde_json::from_str(&text).unwrap();
        assert_eq!(back.reports, a.reports);
        assert_eq!(back.pre.log_groups, a.pre.log_groups);
    }

    #[test]
    fn empty_dataset_has_no_evidence() {
        let w = TimeWindow::new(1_749_146_400, 1_749_150_000).unwrap();
        let err = diagnose_dataset(TelemetryDataset::empty(w), &PipelineConfig::default(), &MockBackend).unwrap_err();
        assert!(err.is_no_evidence(), "{err}");
    }
}

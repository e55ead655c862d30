//! Parquet output in the layouts the ingest module reads.

use std::collections::HashMap;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use arrow_array::{ArrayRef, Float64Array, Int64Array, RecordBatch, StringArray};
use arrow_schema::{DataType, Field, Schema};
use parquet::arrow::ArrowWriter;
use parquet::basic::Compression;
use parquet::file::properties::WriterProperties;
use rayon::prelude::*;
use serde::Serialize;

use super::{synthesize, FixtureError, GroundTruth, Scenario};
use crate::eval::{CaseManifest, CaseSpec};
use crate::ingest::{DatasetPaths, MetricName, MetricSample, TelemetryDataset};

pub const TRACES_FILE: &str = "traces.parquet";
pub const POD_METRICS_FILE: &str = "metrics_pod.parquet";
pub const NODE_METRICS_FILE: &str = "metrics_node.parquet";
pub const LOGS_FILE: &str = "logs.parquet";

fn write_batch(path: &Path, columns: Vec<(&str, DataType, bool, ArrayRef)>) -> Result<(), FixtureError> {
    let err = |detail: String| FixtureError::Write {
        path: path.to_path_buf(),
        detail,
    };
    let schema = Arc::new(Schema::new(
        columns
            .iter()
            .map(|(name, ty, nullable, _)| Field::new(*name, ty.clone(), *nullable))
            .collect::<Vec<_>>(),
    ));
    let batch = RecordBatch::try_new(schema.clone(), columns.into_iter().map(|c| c.3).collect())
        .map_err(|e| err(e.to_string()))?;
    let file = File::create(path).map_err(|source| FixtureError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let props = WriterProperties::builder().set_compression(Compression::SNAPPY).build();
    let mut writer = ArrowWriter::try_new(file, schema, Some(props)).map_err(|e| err(e.to_string()))?;
    writer.write(&batch).map_err(|e| err(e.to_string()))?;
    writer.close().map_err(|e| err(e.to_string()))?;
    Ok(())
}

fn strings<I: IntoIterator<Item = Option<S>>, S: AsRef<str>>(values: I) -> ArrayRef {
    Arc::new(values.into_iter().collect::<StringArray>())
}

fn ints(values: impl IntoIterator<Item = Option<i64>>) -> ArrayRef {
    Arc::new(values.into_iter().collect::<Int64Array>())
}

fn floats(values: impl IntoIterator<Item = Option<f64>>) -> ArrayRef {
    Arc::new(values.into_iter().collect::<Float64Array>())
}

/// Writes `dataset` under `dir` with timestamps stored in their collection
/// units. Samples whose component is their own node go to a wide file with
/// one column per metric; all other samples use the long layout.
pub fn write_dataset(dir: &Path, dataset: &TelemetryDataset) -> Result<DatasetPaths, FixtureError> {
    std::fs::create_dir_all(dir).map_err(|source| FixtureError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let spans = &dataset.spans;
    let traces_path = dir.join(TRACES_FILE);
    write_batch(
        &traces_path,
        vec![
            (
                "traceID",
                DataType::Utf8,
                false,
                strings(spans.iter().map(|s| Some(&s.trace_id))),
            ),
            (
                "spanID",
                DataType::Utf8,
                false,
                strings(spans.iter().map(|s| Some(&s.span_id))),
            ),
            (
                "parentSpanID",
                DataType::Utf8,
                true,
                strings(spans.iter().map(|s| s.parent_span_id.as_ref())),
            ),
            (
                "service",
                DataType::Utf8,
                false,
                strings(spans.iter().map(|s| Some(&s.service))),
            ),
            (
                "pod",
                DataType::Utf8,
                false,
                strings(spans.iter().map(|s| Some(&s.pod))),
            ),
            (
                "startTime",
                DataType::Int64,
                false,
                ints(spans.iter().map(|s| Some(s.start_time))),
            ),
            (
                "duration",
                DataType::Int64,
                false,
                ints(spans.iter().map(|s| Some(s.duration))),
            ),
            (
                "statusCode",
                DataType::Int64,
                true,
                ints(spans.iter().map(|s| s.status_code.map(i64::from))),
            ),
            (
                "tags",
                DataType::Utf8,
                false,
                strings(
                    spans
                        .iter()
                        .map(|s| Some(serde_json::to_string(&s.tags).expect("string map"))),
                ),
            ),
        ],
    )?;

    let (wide, long): (Vec<&MetricSample>, Vec<&MetricSample>) = dataset
        .metrics
        .iter()
        .partition(|m| m.node.as_deref() == Some(m.component.as_str()));
    let mut metric_paths = Vec::new();
    if !long.is_empty() || wide.is_empty() {
        let path = dir.join(POD_METRICS_FILE);
        write_batch(
            &path,
            vec![
                (
                    "component",
                    DataType::Utf8,
                    false,
                    strings(long.iter().map(|m| Some(&m.component))),
                ),
                (
                    "node",
                    DataType::Utf8,
                    true,
                    strings(long.iter().map(|m| m.node.as_ref())),
                ),
                (
                    "timestamp",
                    DataType::Int64,
                    false,
                    ints(long.iter().map(|m| Some(m.timestamp))),
                ),
                (
                    "metric_name",
                    DataType::Utf8,
                    false,
                    strings(long.iter().map(|m| Some(m.metric_name.as_str()))),
                ),
                (
                    "value",
                    DataType::Float64,
                    false,
                    floats(long.iter().map(|m| Some(m.value))),
                ),
            ],
        )?;
        metric_paths.push(path);
    }
    if !wide.is_empty() {
        let path = dir.join(NODE_METRICS_FILE);
        write_wide(&path, &wide)?;
        metric_paths.push(path);
    }

    let logs = &dataset.logs;
    let logs_path = dir.join(LOGS_FILE);
    write_batch(
        &logs_path,
        vec![
            (
                "component",
                DataType::Utf8,
                false,
                strings(logs.iter().map(|l| Some(&l.component))),
            ),
            (
                "node",
                DataType::Utf8,
                true,
                strings(logs.iter().map(|l| l.node.as_ref())),
            ),
            (
                "timestamp",
                DataType::Int64,
                false,
                ints(logs.iter().map(|l| Some(l.timestamp))),
            ),
            (
                "message",
                DataType::Utf8,
                false,
                strings(logs.iter().map(|l| Some(&l.message))),
            ),
        ],
    )?;

    Ok(DatasetPaths {
        trace_paths: vec![traces_path],
        metric_paths,
        log_paths: vec![logs_path],
    })
}

/// One row per (component, timestamp) in first-seen order. A repeated
/// metric within a row starts a new row so nothing is overwritten.
fn write_wide(path: &Path, samples: &[&MetricSample]) -> Result<(), FixtureError> {
    let metrics: Vec<MetricName> = MetricName::ALL
        .into_iter()
        .filter(|m| samples.iter().any(|s| s.metric_name == *m))
        .collect();
    let mut rows: Vec<(&str, i64, HashMap<MetricName, f64>)> = Vec::new();
    let mut open: HashMap<(&str, i64), usize> = HashMap::new();
    for s in samples {
        let key = (s.component.as_str(), s.timestamp);
        let idx = match open.get(&key) {
            Some(&i) if !rows[i].2.contains_key(&s.metric_name) => i,
            _ => {
                rows.push((key.0, key.1, HashMap::new()));
                open.insert(key, rows.len() - 1);
                rows.len() - 1
            }
        };
        rows[idx].2.insert(s.metric_name, s.value);
    }
    let mut columns = vec![
        (
            "component",
            DataType::Utf8,
            false,
            strings(rows.iter().map(|r| Some(r.0))),
        ),
        ("node", DataType::Utf8, false, strings(rows.iter().map(|r| Some(r.0)))),
        (
            "timestamp",
            DataType::Int64,
            false,
            ints(rows.iter().map(|r| Some(r.1))),
        ),
    ];
    for m in metrics {
        columns.push((
            m.as_str(),
            DataType::Float64,
            true,
            floats(rows.iter().map(|r| r.2.get(&m).copied())),
        ));
    }
    write_batch(path, columns)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FixtureError> {
    let text = serde_json::to_string_pretty(value).expect("fixture types serialize");
    std::fs::write(path, text + "\n").map_err(|source| FixtureError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// What [`generate_scenario`] wrote.
#[derive(Debug, Clone)]
pub struct GeneratedScenario {
    pub dir: PathBuf,
    pub paths: DatasetPaths,
    pub truth: GroundTruth,
    pub manifest: PathBuf,
    pub injected_error_logs: std::collections::BTreeMap<String, u64>,
}

fn relative(paths: &DatasetPaths, base: &Path) -> DatasetPaths {
    let rel = |v: &[PathBuf]| {
        v.iter()
            .map(|p| {
                p.strip_prefix(base)
                    .map(Path::to_path_buf)
                    .unwrap_or_else(|_| p.clone())
            })
            .collect()
    };
    DatasetPaths {
        trace_paths: rel(&paths.trace_paths),
        metric_paths: rel(&paths.metric_paths),
        log_paths: rel(&paths.log_paths),
    }
}

fn case_for(s: &Scenario, paths: DatasetPaths, truth: &GroundTruth) -> CaseSpec {
    CaseSpec {
        case_id: s.id.clone(),
        dataset: Some(paths),
        scenario: None,
        window: s.case_window,
        ground_truth: truth.clone(),
    }
}

/// Writes the Parquet files, `ground_truth.json`, `scenario.json` and a
/// one-case `manifest.json` (paths relative to `out_dir`).
pub fn generate_scenario(s: &Scenario, out_dir: &Path) -> Result<GeneratedScenario, FixtureError> {
    let synth = synthesize(s)?;
    let paths = write_dataset(out_dir, &synth.dataset)?;
    write_json(&out_dir.join("ground_truth.json"), &synth.truth)?;
    write_json(&out_dir.join("scenario.json"), s)?;
    let manifest_path = out_dir.join("manifest.json");
    let manifest = CaseManifest {
        cases: vec![case_for(s, relative(&paths, out_dir), &synth.truth)],
    };
    write_json(&manifest_path, &manifest)?;
    Ok(GeneratedScenario {
        dir: out_dir.to_path_buf(),
        paths,
        truth: synth.truth,
        manifest: manifest_path,
        injected_error_logs: synth.injected_error_logs,
    })
}

/// Generates every scenario into `out_dir/<id>/` in parallel and writes a
/// combined `out_dir/manifest.json`.
pub fn generate_corpus(
    scenarios: &[Scenario],
    out_dir: &Path,
) -> Result<(PathBuf, Vec<GeneratedScenario>), FixtureError> {
    let generated: Vec<GeneratedScenario> = scenarios
        .par_iter()
        .map(|s| generate_scenario(s, &out_dir.join(&s.id)))
        .collect::<Result<_, _>>()?;
    let cases = scenarios
        .iter()
        .zip(&generated)
        .map(|(s, g)| case_for(s, relative(&g.paths, out_dir), &g.truth))
        .collect();
    let manifest_path = out_dir.join("manifest.json");
    write_json(&manifest_path, &CaseManifest { cases })?;
    Ok((manifest_path, generated))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::reference_case_scenario;
    use crate::ingest::load_dataset;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let s = reference_case_scenario();
        let original = synthesize(&s).unwrap().dataset;
        let paths = write_dataset(dir.path(), &original).unwrap();
        let back = load_dataset(&paths, s.span).unwrap();
        assert_eq!(back.units, original.units);
        assert_eq!(back.spans, original.spans);
        assert_eq!(back.metrics, original.metrics);
        assert_eq!(back.logs, original.logs);
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let s = reference_case_scenario();
        generate_scenario(&s, a.path()).unwrap();
        generate_scenario(&s, b.path()).unwrap();
        for name in [
            TRACES_FILE,
            POD_METRICS_FILE,
            NODE_METRICS_FILE,
            LOGS_FILE,
            "ground_truth.json",
            "manifest.json",
        ] {
            let x = std::fs::read(a.path().join(name)).unwrap();
            let y = std::fs::read(b.path().join(name)).unwrap();
            assert!(x == y, "{name} differs");
        }
    }
}

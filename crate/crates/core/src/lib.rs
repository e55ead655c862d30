//! Root-cause analysis for microservice telemetry.
//!
//! The pipeline loads traces, metrics and logs, groups them per component,
//! runs one analyzer per modality, fuses the findings into a ranked evidence
//! context and hands that to a reasoning backend that names the faulty
//! component.

pub mod component;
pub mod config;
pub mod eval;
pub mod fixtures;
pub mod fusion;
pub mod ingest;
pub mod log_analysis;
pub mod metric_analysis;
pub mod pipeline;
pub mod preprocess;
pub mod reasoner;
pub mod time;
pub mod trace_analysis;

//! Error classes and their exit codes.

use rca_core::config::ConfigError;
use rca_core::eval::ManifestError;
use rca_core::fixtures::FixtureError;
use rca_core::fusion::{FusionError, Strategy};
use rca_core::ingest::IngestError;
use rca_core::pipeline::PipelineError;
use rca_core::reasoner::ReasonerError;

#[derive(Debug)]
pub enum Failure {
    Io(String),
    Usage(String),
    Ingest(String),
    NoEvidence(String),
    Backend(String),
    Parse(String),
    Config(String),
    InvalidSpec(String),
    Manifest(String),
    AccuracyGate {
        strategy: Strategy,
        accuracy: f64,
        min: f64,
    },
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Ingest(_) => 3,
            Failure::NoEvidence(_) => 4,
            Failure::Backend(_) => 5,
            Failure::Parse(_) => 6,
            Failure::Config(_) => 7,
            Failure::InvalidSpec(_) => 8,
            Failure::Manifest(_) => 9,
            Failure::AccuracyGate { .. } => 10,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Failure::Io(_) => "io",
            Failure::Usage(_) => "usage",
            Failure::Ingest(_) => "ingest",
            Failure::NoEvidence(_) => "no_evidence",
            Failure::Backend(_) => "backend",
            Failure::Parse(_) => "parse",
            Failure::Config(_) => "config",
            Failure::InvalidSpec(_) => "invalid_spec",
            Failure::Manifest(_) => "manifest",
            Failure::AccuracyGate { .. } => "accuracy_gate",
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Io(m)
            | Failure::Usage(m)
            | Failure::Ingest(m)
            | Failure::NoEvidence(m)
            | Failure::Backend(m)
            | Failure::Parse(m)
            | Failure::Config(m)
            | Failure::InvalidSpec(m)
            | Failure::Manifest(m) => m.clone(),
            Failure::AccuracyGate {
                strategy,
                accuracy,
                min,
            } => {
                format!("{} accuracy {accuracy:.4} is below {min}", strategy.as_str())
            }
        }
    }

    /// One line for stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({"error": self.kind(), "code": self.code(), "message": self.message()}).to_string()
    }
}

impl From<IngestError> for Failure {
    fn from(e: IngestError) -> Self {
        Failure::Ingest(e.to_string())
    }
}

impl From<FusionError> for Failure {
    fn from(e: FusionError) -> Self {
        match e {
            FusionError::NoEvidence => Failure::NoEvidence(e.to_string()),
            FusionError::InvalidConfig(_) => Failure::Config(e.to_string()),
        }
    }
}

impl From<ReasonerError> for Failure {
    fn from(e: ReasonerError) -> Self {
        match e {
            ReasonerError::EmptyContext => Failure::NoEvidence(e.to_string()),
            ReasonerError::Parse(_) => Failure::Parse(e.to_string()),
            ReasonerError::Config(_) => Failure::Config(e.to_string()),
            ReasonerError::BackendTimeout { .. } | ReasonerError::BackendHttp { .. } | ReasonerError::Replay(_) => {
                Failure::Backend(e.to_string())
            }
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<ManifestError> for Failure {
    fn from(e: ManifestError) -> Self {
        Failure::Manifest(e.to_string())
    }
}

impl From<FixtureError> for Failure {
    fn from(e: FixtureError) -> Self {
        match e {
            FixtureError::InvalidSpec(_) => Failure::InvalidSpec(e.to_string()),
            _ => Failure::Io(e.to_string()),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Ingest(e) => e.into(),
            PipelineError::Fusion(e) => e.into(),
            PipelineError::Reasoner(e) => e.into(),
            PipelineError::Config(e) => e.into(),
        }
    }
}

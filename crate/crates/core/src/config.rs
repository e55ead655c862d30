//! Settings for a whole pipeline run.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::FusionConfig;
use crate::log_analysis::KeywordConfig;
use crate::metric_analysis::DetectorConfig;
use crate::reasoner::BackendConfig;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid config: {0}")]
pub struct ConfigError(pub String);

pub const LOG_LEVELS: [&str; 5] = ["trace", "debug", "info", "warn", "error"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub detector: DetectorConfig,
    pub keywords: KeywordConfig,
    pub fusion: FusionConfig,
    pub backend: BackendConfig,
    /// Worker threads for analysis and evaluation.
    pub parallelism: usize,
    pub log_level: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            detector: DetectorConfig::default(),
            keywords: KeywordConfig::default(),
            fusion: FusionConfig::default(),
            backend: BackendConfig::default(),
            parallelism: std::thread::available_parallelism().map_or(1, |n| n.get()),
            log_level: "warn".into(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let wrap = |e: &dyn std::fmt::Display| ConfigError(e.to_string());
        self.detector.validate().map_err(|e| wrap(&e))?;
        self.keywords.validate().map_err(|e| wrap(&e))?;
        self.fusion.validate().map_err(|e| wrap(&e))?;
        self.backend.validate().map_err(|e| wrap(&e))?;
        if self.parallelism == 0 {
            return Err(ConfigError("parallelism must be at least 1".into()));
        }
        if !LOG_LEVELS.contains(&self.log_level.to_ascii_lowercase().as_str()) {
            return Err(ConfigError(format!(
                "log_level {:?} is not one of {}",
                self.log_level,
                LOG_LEVELS.join(", ")
            )));
        }
        Ok(())
    }
}

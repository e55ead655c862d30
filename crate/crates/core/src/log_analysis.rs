//! Keyword and status-code filtering of log records.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::component::ComponentId;
use crate::ingest::LogRecord;

pub const MAX_EXCERPT_CHARS: usize = 512;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KeywordConfigError {
    #[error("keyword list is empty")]
    NoKeywords,
    #[error("keyword at position {0} is blank")]
    BlankKeyword(usize),
    #[error("status code {0} is not a 3-digit code")]
    BadStatusCode(u16),
    #[error("max_entries_per_component must be at least 1")]
    ZeroEntries,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeywordConfig {
    /// Case-insensitive substrings.
    pub keywords: Vec<String>,
    /// Matched only as standalone digit runs.
    pub status_codes: Vec<u16>,
    pub max_entries_per_component: usize,
}

impl Default for KeywordConfig {
    fn default() -> Self {
        Self {
            keywords: ["Error", "Timeout", "Exception", "Failed"].map(String::from).to_vec(),
            status_codes: vec![400, 404, 500],
            max_entries_per_component: 50,
        }
    }
}

impl KeywordConfig {
    pub fn validate(&self) -> Result<(), KeywordConfigError> {
        if self.keywords.is_empty() {
            return Err(KeywordConfigError::NoKeywords);
        }
        if let Some(i) = self.keywords.iter().position(|k| k.trim().is_empty()) {
            return Err(KeywordConfigError::BlankKeyword(i));
        }
        if let Some(&c) = self.status_codes.iter().find(|c| !(100..=999).contains(*c)) {
            return Err(KeywordConfigError::BadStatusCode(c));
        }
        if self.max_entries_per_component == 0 {
            return Err(KeywordConfigError::ZeroEntries);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub timestamp: i64,
    pub pattern: String,
    pub excerpt: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogAnomalyReport {
    /// Retained matches per component, oldest first.
    #[serde(with = "crate::component::keyed")]
    pub entries: BTreeMap<ComponentId, Vec<LogEntry>>,
    /// Every match, including those dropped by the per-component cap.
    #[serde(with = "crate::component::keyed")]
    pub per_component_count: BTreeMap<ComponentId, u64>,
}

impl LogAnomalyReport {
    pub fn is_empty(&self) -> bool {
        self.per_component_count.is_empty()
    }

    pub fn total_count(&self) -> u64 {
        self.per_component_count.values().sum()
    }

    pub fn merge(mut self, other: LogAnomalyReport) -> Self {
        for (c, n) in other.per_component_count {
            *self.per_component_count.entry(c).or_insert(0) += n;
        }
        for (c, mut e) in other.entries {
            let slot = self.entries.entry(c).or_default();
            slot.append(&mut e);
            slot.sort_by_key(|x| x.timestamp);
        }
        self
    }
}

struct Matcher {
    keywords: Vec<(String, String)>,
    codes: Vec<String>,
}

impl Matcher {
    fn new(cfg: &KeywordConfig) -> Self {
        Self {
            keywords: cfg.keywords.iter().map(|k| (k.clone(), k.to_lowercase())).collect(),
            codes: cfg.status_codes.iter().map(u16::to_string).collect(),
        }
    }

    /// The first keyword (config order) or status code found in `message`.
    fn find(&self, message: &str) -> Option<&str> {
        let lower = message.to_lowercase();
        if let Some((k, _)) = self.keywords.iter().find(|(_, low)| lower.contains(low.as_str())) {
            return Some(k);
        }
        if self.codes.is_empty() {
            return None;
        }
        for run in digit_runs(message) {
            if let Some(code) = self.codes.iter().find(|c| c.as_str() == run) {
                return Some(code);
            }
        }
        None
    }
}

/// Maximal runs of ASCII digits.
fn digit_runs(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !c.is_ascii_digit()).filter(|s| !s.is_empty())
}

/// The first [`MAX_EXCERPT_CHARS`] characters, with an ellipsis when cut.
pub fn excerpt(message: &str) -> String {
    let trimmed = message.trim();
    if trimmed.chars().count() <= MAX_EXCERPT_CHARS {
        return trimmed.to_string();
    }
    let mut out: String = trimmed.chars().take(MAX_EXCERPT_CHARS - 1).collect();
    out.push('…');
    out
}

/// Keeps error-looking log records per component. Counts are exact; at most
/// `max_entries_per_component` of the oldest matches are retained.
pub fn filter_error_logs(log_groups: &BTreeMap<ComponentId, Vec<LogRecord>>, cfg: &KeywordConfig) -> LogAnomalyReport {
    let matcher = Matcher::new(cfg);
    let per_component: Vec<(ComponentId, u64, Vec<LogEntry>)> = log_groups
        .par_iter()
        .filter_map(|(component, logs)| {
            let mut count = 0u64;
            let mut kept = Vec::new();
            for log in logs {
                let Some(pattern) = matcher.find(&log.message) else {
                    continue;
                };
                count += 1;
                if kept.len() < cfg.max_entries_per_component {
                    kept.push(LogEntry {
                        timestamp: log.timestamp,
                        pattern: pattern.to_string(),
                        excerpt: excerpt(&log.message),
                    });
                }
            }
            (count > 0).then(|| (component.clone(), count, kept))
        })
        .collect();

    let mut report = LogAnomalyReport::default();
    for (component, count, kept) in per_component {
        report.per_component_count.insert(component.clone(), count);
        report.entries.insert(component, kept);
    }
    report
}

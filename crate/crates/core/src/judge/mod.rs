//! Binary consistency judgments from target models.
//!
//! Each triple is rendered into a fixed prompt, sent to the model, and the
//! reply is reduced to a verdict. A record is a success when the verdict
//! agrees with the triple's ground-truth label.

mod backend;
mod prompt;
mod runner;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::Triple;

pub use backend::{BackendError, HttpBackend, HttpConfig, JudgeBackend, MockBackend, MockRule};
pub use prompt::{parse_judgment, prompt_version, render_prompt, Prompt, QUESTION, SYSTEM_INSTRUCTION};
pub use runner::{cache_key, JudgeCache, JudgeOptions, JudgeRunner};

#[derive(Debug, thiserror::Error)]
pub enum JudgeError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Record { path: PathBuf, line: usize, message: String },
    #[error("no judgment records to aggregate")]
    NoRecords,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Match,
    NoMatch,
    Invalid,
}

impl Verdict {
    pub fn bit(self) -> Option<u8> {
        match self {
            Verdict::Match => Some(1),
            Verdict::NoMatch => Some(0),
            Verdict::Invalid => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgmentRecord {
    pub triple_id: String,
    pub model_id: String,
    pub verdict: Verdict,
    pub raw_response: String,
    pub success: u8,
    pub latency: f64,
    pub prompt_version: String,
    /// Ground-truth label of the judged triple.
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl JudgmentRecord {
    pub fn new(triple: &Triple, model_id: &str, raw_response: String, latency: f64, error: Option<String>) -> Self {
        let verdict = if error.is_some() { Verdict::Invalid } else { parse_judgment(&raw_response) };
        JudgmentRecord {
            triple_id: triple.id(),
            model_id: model_id.to_string(),
            verdict,
            raw_response,
            success: u8::from(verdict.bit() == Some(triple.label)),
            latency,
            prompt_version: prompt_version().to_string(),
            label: triple.label,
            error,
        }
    }

    /// The verdict as a prediction of the label; invalid verdicts predict
    /// the wrong class.
    pub fn predicted_bit(&self) -> u8 {
        self.verdict.bit().unwrap_or(1 - self.label)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Confusion,
    pub total: usize,
    pub invalid: usize,
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl AggregateMetrics {
    pub fn from_confusion(counts: Confusion, invalid: usize) -> Self {
        let total = counts.tp + counts.fp + counts.tn + counts.fn_;
        let precision = ratio(counts.tp, counts.tp + counts.fp);
        let recall = ratio(counts.tp, counts.tp + counts.fn_);
        AggregateMetrics {
            accuracy: ratio(counts.tp + counts.tn, total),
            precision,
            recall,
            f1: f1_score(precision, recall),
            counts,
            total,
            invalid,
        }
    }
}

/// Table-style metrics with "consistent" (label 1) as the positive class.
pub fn aggregate(records: &[JudgmentRecord]) -> Result<AggregateMetrics, JudgeError> {
    if records.is_empty() {
        return Err(JudgeError::NoRecords);
    }
    let mut c = Confusion::default();
    let mut invalid = 0;
    for r in records {
        invalid += usize::from(r.verdict == Verdict::Invalid);
        match (r.predicted_bit(), r.label) {
            (1, 1) => c.tp += 1,
            (1, _) => c.fp += 1,
            (_, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(AggregateMetrics::from_confusion(c, invalid))
}

/// Same metrics with invalid verdicts dropped instead of scored as wrong.
pub fn aggregate_excluding_invalid(records: &[JudgmentRecord]) -> Result<AggregateMetrics, JudgeError> {
    let valid: Vec<JudgmentRecord> = records.iter().filter(|r| r.verdict != Verdict::Invalid).cloned().collect();
    aggregate(&valid)
}

pub fn records_to_jsonl(records: &[JudgmentRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_records(path: &Path, records: &[JudgmentRecord]) -> Result<(), JudgeError> {
    crate::atomic::write_atomic(path, records_to_jsonl(records).as_bytes())
        .map_err(|source| JudgeError::Io { path: path.to_path_buf(), source })
}

pub fn read_records(path: &Path) -> Result<Vec<JudgmentRecord>, JudgeError> {
    let text = fs::read_to_string(path).map_err(|source| JudgeError::Io { path: path.to_path_buf(), source })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| JudgeError::Record {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

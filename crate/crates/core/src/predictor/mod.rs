//! Success prediction from static features: labeled matrices, stratified
//! splitting, gradient-boosted trees and AUROC.

mod gbdt;

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::{catalog_id_for, FeatureMatrix};

pub use gbdt::{logit, sigmoid, train, Hyperparameters, Node, Tree, TreeEnsembleModel, MODEL_FORMAT_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum PredictorError {
    #[error("both classes must be present")]
    SingleClass,
    #[error("scores and labels differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("score {0} is not a finite number")]
    NonFiniteScore(f64),
    #[error("duplicate row id {0}")]
    DuplicateId(String),
    #[error("row {id} has {found} values, expected {expected}")]
    RowWidth { id: String, expected: usize, found: usize },
    #[error("feature catalog mismatch: model expects {expected}, data has {found}")]
    CatalogMismatch { expected: String, found: String },
    #[error("unknown feature {0}")]
    UnknownFeature(String),
    #[error("invalid hyperparameters: {0}")]
    Hyperparameters(String),
    #[error("malformed model or scores: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRow {
    pub id: String,
    pub values: Vec<f64>,
    pub success: u8,
}

/// Feature rows paired with a target model's success labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledMatrix {
    pub catalog_id: String,
    pub feature_names: Vec<String>,
    pub rows: Vec<LabeledRow>,
}

impl LabeledMatrix {
    pub fn new(feature_names: Vec<String>, rows: Vec<LabeledRow>) -> Result<Self, PredictorError> {
        let mut seen = HashSet::new();
        for r in &rows {
            if !seen.insert(r.id.as_str()) {
                return Err(PredictorError::DuplicateId(r.id.clone()));
            }
            if r.values.len() != feature_names.len() {
                return Err(PredictorError::RowWidth {
                    id: r.id.clone(),
                    expected: feature_names.len(),
                    found: r.values.len(),
                });
            }
        }
        Ok(LabeledMatrix { catalog_id: catalog_id_for(&feature_names), feature_names, rows })
    }

    /// Rows of `features` that have a success label, in id order.
    pub fn join(features: &FeatureMatrix, success: &BTreeMap<String, u8>) -> Result<Self, PredictorError> {
        let mut rows: Vec<LabeledRow> = features
            .rows
            .iter()
            .filter_map(|(id, values)| {
                success.get(id).map(|&s| LabeledRow { id: id.clone(), values: values.clone(), success: s })
            })
            .collect();
        rows.sort_by(|a, b| a.id.cmp(&b.id));
        Self::new(features.names.clone(), rows)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.rows.iter().map(|r| r.success).collect()
    }

    pub fn positives(&self) -> usize {
        self.rows.iter().filter(|r| r.success == 1).count()
    }

    fn subset(&self, idx: &[usize]) -> Self {
        let mut rows: Vec<LabeledRow> = idx.iter().map(|&i| self.rows[i].clone()).collect();
        rows.sort_by(|a, b| a.id.cmp(&b.id));
        LabeledMatrix { catalog_id: self.catalog_id.clone(), feature_names: self.feature_names.clone(), rows }
    }

    /// Matrix restricted to the named columns, in the given order.
    pub fn select_columns<S: AsRef<str>>(&self, names: &[S]) -> Result<Self, PredictorError> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.feature_names
                    .iter()
                    .position(|f| f == n.as_ref())
                    .ok_or_else(|| PredictorError::UnknownFeature(n.as_ref().to_string()))
            })
            .collect::<Result<_, _>>()?;
        let rows = self
            .rows
            .iter()
            .map(|r| LabeledRow { id: r.id.clone(), values: idx.iter().map(|&i| r.values[i]).collect(), success: r.success })
            .collect();
        Self::new(idx.iter().map(|&i| self.feature_names[i].clone()).collect(), rows)
    }
}

/// Per-class shuffle, then the first `round(ratio * class size)` rows of each
/// class go to training. Both parts come back in id order.
pub fn stratified_split(matrix: &LabeledMatrix, ratio: f64, seed: u64) -> Result<(LabeledMatrix, LabeledMatrix), PredictorError> {
    let mut order: Vec<usize> = (0..matrix.len()).collect();
    order.sort_by(|&a, &b| matrix.rows[a].id.cmp(&matrix.rows[b].id));
    let (mut pos, mut neg): (Vec<usize>, Vec<usize>) = order.into_iter().partition(|&i| matrix.rows[i].success == 1);
    if pos.is_empty() || neg.is_empty() {
        return Err(PredictorError::SingleClass);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [pos, neg] {
        let k = (ratio * class.len() as f64).round() as usize;
        train.extend_from_slice(&class[..k]);
        test.extend_from_slice(&class[k..]);
    }
    Ok((matrix.subset(&train), matrix.subset(&test)))
}

/// Area under the ROC curve via the rank-sum statistic, ties receiving their
/// average rank.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64, PredictorError> {
    if scores.len() != labels.len() {
        return Err(PredictorError::LengthMismatch(scores.len(), labels.len()));
    }
    if let Some(&bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(PredictorError::NonFiniteScore(bad));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(PredictorError::SingleClass);
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * idx[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let n_pos = n_pos as f64;
    Ok((rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub triple_id: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
}

/// CSV with header `triple_id,score` and an optional `label` column.
pub fn write_scores(path: &Path, rows: &[ScoreRow]) -> Result<(), PredictorError> {
    let fmt = |e: csv::Error| PredictorError::Format(format!("{}: {e}", path.display()));
    let with_label = rows.iter().any(|r| r.label.is_some());
    let mut w = csv::Writer::from_writer(Vec::new());
    if with_label {
        w.write_record(["triple_id", "score", "label"]).map_err(fmt)?;
    } else {
        w.write_record(["triple_id", "score"]).map_err(fmt)?;
    }
    for r in rows {
        let mut rec = vec![r.triple_id.clone(), r.score.to_string()];
        if with_label {
            rec.push(r.label.map(|l| l.to_string()).unwrap_or_default());
        }
        w.write_record(&rec).map_err(fmt)?;
    }
    let bytes = w.into_inner().map_err(|e| PredictorError::Format(e.to_string()))?;
    crate::atomic::write_atomic(path, &bytes).map_err(|source| PredictorError::Io { path: path.to_path_buf(), source })
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>, PredictorError> {
    let fmt = |e: csv::Error| PredictorError::Format(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(fmt)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        let row: ScoreRow = row.map_err(fmt)?;
        out.push(row);
    }
    Ok(out)
}

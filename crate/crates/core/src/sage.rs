//! Global feature importance by permutation-sampled SAGE values.
//!
//! Sample `k` takes evaluation row `order[k mod n]` (a seeded shuffle of the
//! evaluation rows) and a random feature permutation drawn from its own RNG
//! stream. Starting from every feature marginalized over the background rows,
//! features are revealed in permutation order and the drop in cross-entropy
//! is credited to the revealed feature. Values are sample means; standard
//! errors are sample standard deviations over `sqrt(n_samples)`.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::predictor::{
    auroc, sigmoid, stratified_split, train, Hyperparameters, LabeledMatrix, PredictorError, TreeEnsembleModel,
};

#[derive(Debug, thiserror::Error)]
pub enum SageError {
    #[error("background set is empty")]
    EmptyBackground,
    #[error("no evaluation rows")]
    EmptyEval,
    #[error("need at least 2 permutations for a variance estimate, got {0}")]
    TooFewPermutations(usize),
    #[error("no feature has a positive SAGE value (largest value {max})")]
    NoPositiveValues { max: f64 },
    #[error("threshold must lie in (0, 1], got {0}")]
    BadThreshold(f64),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SageOptions {
    pub n_permutations: usize,
    pub background_size: usize,
    pub seed: u64,
}

impl Default for SageOptions {
    fn default() -> Self {
        SageOptions { n_permutations: 512, background_size: 128, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SageValue {
    pub name: String,
    /// Expected loss reduction in nats.
    pub value: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SageReport {
    /// In catalog order.
    pub features: Vec<SageValue>,
    pub n_permutations: usize,
    pub background_size: usize,
    pub eval_rows: usize,
    pub seed: u64,
    pub base_loss: f64,
    pub full_loss: f64,
    /// Standard error of the per-sample total loss reduction.
    pub total_std_error: f64,
}

impl SageReport {
    /// Descending by value, ties by name.
    pub fn ranked(&self) -> Vec<&SageValue> {
        let mut v: Vec<&SageValue> = self.features.iter().collect();
        v.sort_by(|a, b| b.value.total_cmp(&a.value).then_with(|| a.name.cmp(&b.name)));
        v
    }

    pub fn total(&self) -> f64 {
        self.features.iter().map(|f| f.value).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Markdown table of the `k` highest-valued features.
    pub fn markdown_table(&self, k: usize) -> String {
        let mut out = String::from("| rank | feature | SAGE value (nats) | std. error |\n|---:|---|---:|---:|\n");
        for (i, f) in self.ranked().into_iter().take(k).enumerate() {
            out.push_str(&format!("| {} | `{}` | {:.6} | {:.6} |\n", i + 1, f.name, f.value, f.std_error));
        }
        out
    }
}

const PROB_FLOOR: f64 = 1e-12;

/// Binary cross-entropy in nats with the probability clamped away from 0 and 1.
pub fn cross_entropy(p: f64, label: u8) -> f64 {
    let p = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Rows drawn without replacement from `train`, seeded, in id order.
pub fn draw_background(train: &LabeledMatrix, size: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = train.len();
    let mut idx = if size >= n { (0..n).collect() } else { sample(&mut ChaCha8Rng::seed_from_u64(seed), n, size).into_vec() };
    idx.sort_by(|&a, &b| train.rows[a].id.cmp(&train.rows[b].id));
    idx.into_iter().map(|i| train.rows[i].values.clone()).collect()
}

/// Prediction with features outside the revealed set taken from each
/// background row, averaged over the background. Updated incrementally as
/// features are revealed: only trees that split on the revealed feature are
/// re-evaluated.
struct MarginalState<'a> {
    model: &'a TreeEnsembleModel,
    rows: Vec<Vec<f64>>,
    contrib: Vec<Vec<f64>>,
    margins: Vec<f64>,
}

impl<'a> MarginalState<'a> {
    fn new(model: &'a TreeEnsembleModel, background: &[Vec<f64>]) -> Self {
        let rows = background.to_vec();
        let contrib: Vec<Vec<f64>> = model.trees.iter().map(|t| rows.iter().map(|r| t.predict(r)).collect()).collect();
        let margins = (0..rows.len())
            .map(|b| model.base_score + model.learning_rate * contrib.iter().map(|c| c[b]).sum::<f64>())
            .collect();
        MarginalState { model, rows, contrib, margins }
    }

    fn probability(&self) -> f64 {
        self.margins.iter().map(|&m| sigmoid(m)).sum::<f64>() / self.margins.len() as f64
    }

    fn reveal(&mut self, feature: usize, value: f64, trees: &[usize]) {
        for (b, row) in self.rows.iter_mut().enumerate() {
            if row[feature] == value {
                continue;
            }
            row[feature] = value;
            for &t in trees {
                let new = self.model.trees[t].predict(row);
                self.margins[b] += self.model.learning_rate * (new - self.contrib[t][b]);
                self.contrib[t][b] = new;
            }
        }
    }
}

pub fn estimate_sage(
    model: &TreeEnsembleModel,
    eval: &LabeledMatrix,
    background: &[Vec<f64>],
    options: &SageOptions,
) -> Result<SageReport, SageError> {
    if background.is_empty() {
        return Err(SageError::EmptyBackground);
    }
    if eval.is_empty() {
        return Err(SageError::EmptyEval);
    }
    if options.n_permutations < 2 {
        return Err(SageError::TooFewPermutations(options.n_permutations));
    }
    if eval.catalog_id != model.catalog_id {
        return Err(PredictorError::CatalogMismatch { expected: model.catalog_id.clone(), found: eval.catalog_id.clone() }.into());
    }
    let d = model.feature_names.len();
    let by_feature = model.trees_by_feature();
    let initial = MarginalState::new(model, background);
    let base_p = initial.probability();

    let mut order: Vec<usize> = (0..eval.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(options.seed));

    let samples: Vec<Vec<f64>> = (0..options.n_permutations)
        .into_par_iter()
        .map(|k| {
            let row = &eval.rows[order[k % order.len()]];
            let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
            rng.set_stream(k as u64 + 1);
            let mut perm: Vec<usize> = (0..d).collect();
            perm.shuffle(&mut rng);

            let mut state = MarginalState { model, rows: initial.rows.clone(), contrib: initial.contrib.clone(), margins: initial.margins.clone() };
            let mut deltas = vec![0.0; d];
            let mut prev = cross_entropy(base_p, row.success);
            for j in perm {
                if by_feature[j].is_empty() {
                    continue;
                }
                state.reveal(j, row.values[j], &by_feature[j]);
                let loss = cross_entropy(state.probability(), row.success);
                deltas[j] = prev - loss;
                prev = loss;
            }
            deltas
        })
        .collect();

    let n = samples.len() as f64;
    let mut features = Vec::with_capacity(d);
    for j in 0..d {
        let mean = samples.iter().map(|s| s[j]).sum::<f64>() / n;
        let var = samples.iter().map(|s| (s[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        features.push(SageValue { name: model.feature_names[j].clone(), value: mean, std_error: (var / n).sqrt() });
    }
    let totals: Vec<f64> = samples.iter().map(|s| s.iter().sum::<f64>()).collect();
    let total_mean = totals.iter().sum::<f64>() / n;
    let total_var = totals.iter().map(|t| (t - total_mean).powi(2)).sum::<f64>() / (n - 1.0);

    let m = eval.len() as f64;
    let base_loss = eval.rows.iter().map(|r| cross_entropy(base_p, r.success)).sum::<f64>() / m;
    let full_loss = eval.rows.iter().map(|r| cross_entropy(model.predict_row(&r.values), r.success)).sum::<f64>() / m;

    Ok(SageReport {
        features,
        n_permutations: options.n_permutations,
        background_size: background.len(),
        eval_rows: eval.len(),
        seed: options.seed,
        base_loss,
        full_loss,
        total_std_error: (total_var / n).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunedSubset {
    pub retained: Vec<String>,
    pub covered_mass: f64,
    pub total_positive_mass: f64,
    pub threshold: f64,
}

/// Shortest prefix of the positive values, sorted descending with ties by
/// name, whose sum reaches `threshold` of the total positive mass.
pub fn prune_by_positive_mass(report: &SageReport, threshold: f64) -> Result<PrunedSubset, SageError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(SageError::BadThreshold(threshold));
    }
    let positive: Vec<&SageValue> = report.ranked().into_iter().filter(|f| f.value > 0.0).collect();
    if positive.is_empty() {
        let max = report.features.iter().map(|f| f.value).fold(f64::NEG_INFINITY, f64::max);
        return Err(SageError::NoPositiveValues { max });
    }
    let total: f64 = positive.iter().map(|f| f.value).sum();
    // relative slack so that exact decimal boundaries survive rounding
    let target = threshold * total * (1.0 - 1e-12);
    let mut covered = 0.0;
    let mut retained = Vec::new();
    for f in &positive {
        covered += f.value;
        retained.push(f.name.clone());
        if covered >= target {
            break;
        }
    }
    Ok(PrunedSubset { retained, covered_mass: covered, total_positive_mass: total, threshold })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub n_features: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub full_auroc: f64,
    pub pruned_auroc: f64,
    pub retained_count: usize,
    pub retained_fraction: f64,
    /// Share of positive SAGE mass held by the single top feature.
    pub top_feature_share: f64,
    pub full_degenerate: bool,
    pub pruned_degenerate: bool,
    pub pruned: PrunedSubset,
}

pub struct ComparisonArtifacts {
    pub comparison: Comparison,
    pub full_model: TreeEnsembleModel,
    pub pruned_model: TreeEnsembleModel,
    pub report: SageReport,
    pub test: LabeledMatrix,
}

/// Prunes by positive SAGE mass, retrains on the retained columns and scores
/// both models on `test`.
pub fn prune_and_retrain(
    train_m: &LabeledMatrix,
    test_m: &LabeledMatrix,
    full_model: &TreeEnsembleModel,
    report: &SageReport,
    hyper: &Hyperparameters,
    threshold: f64,
) -> Result<(Comparison, TreeEnsembleModel), SageError> {
    let pruned = prune_by_positive_mass(report, threshold)?;
    let pruned_train = train_m.select_columns(&pruned.retained)?;
    let pruned_test = test_m.select_columns(&pruned.retained)?;
    let pruned_model = train(&pruned_train, hyper)?;
    let labels = test_m.labels();
    let full_auroc = auroc(&full_model.predict_matrix(test_m)?, &labels)?;
    let pruned_auroc = auroc(&pruned_model.predict_matrix(&pruned_test)?, &labels)?;
    let top = report.ranked()[0].value.max(0.0);
    let n_features = full_model.feature_names.len();
    let comparison = Comparison {
        n_features,
        n_train: train_m.len(),
        n_test: test_m.len(),
        full_auroc,
        pruned_auroc,
        retained_count: pruned.retained.len(),
        retained_fraction: pruned.retained.len() as f64 / n_features as f64,
        top_feature_share: top / pruned.total_positive_mass,
        full_degenerate: full_model.degenerate,
        pruned_degenerate: pruned_model.degenerate,
        pruned,
    };
    Ok((comparison, pruned_model))
}

/// Stratified 80/20 split, full model, SAGE on the test rows, pruning,
/// retraining on the retained columns and both test AUROCs.
pub fn compare_full_vs_pruned(
    matrix: &LabeledMatrix,
    hyper: &Hyperparameters,
    sage: &SageOptions,
    threshold: f64,
    split_seed: u64,
) -> Result<ComparisonArtifacts, SageError> {
    let (train_m, test_m) = stratified_split(matrix, 0.8, split_seed)?;
    let full_model = train(&train_m, hyper)?;
    let background = draw_background(&train_m, sage.background_size, sage.seed);
    let report = estimate_sage(&full_model, &test_m, &background, sage)?;
    let (comparison, pruned_model) = prune_and_retrain(&train_m, &test_m, &full_model, &report, hyper, threshold)?;
    Ok(ComparisonArtifacts { comparison, full_model, pruned_model, report, test: test_m })
}

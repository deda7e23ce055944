//! Second-order gradient-boosted regression trees for logistic loss.
//!
//! Trees are grown level by level with exact greedy splits over presorted
//! columns. A row goes left when `x[feature] < threshold`; thresholds are
//! midpoints between consecutive distinct values.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{LabeledMatrix, PredictorError};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparameters {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub subsample: f64,
    pub min_samples_leaf: usize,
    /// L2 penalty on leaf values.
    pub lambda: f64,
    pub seed: u64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            n_trees: 300,
            max_depth: 6,
            learning_rate: 0.1,
            subsample: 0.8,
            min_samples_leaf: 20,
            lambda: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Tree { nodes: vec![Node::Leaf { value }] }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right } => {
                    i = if row[feature] < threshold { left } else { right };
                }
            }
        }
    }

    /// Distinct feature indices this tree splits on, ascending.
    pub fn features(&self) -> Vec<usize> {
        let mut f: Vec<usize> = self
            .nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .collect();
        f.sort_unstable();
        f.dedup();
        f
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsembleModel {
    pub format_version: u32,
    pub catalog_id: String,
    pub feature_names: Vec<String>,
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
    /// Set when no column varied, so the model is the base rate.
    pub degenerate: bool,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl TreeEnsembleModel {
    pub fn margin(&self, row: &[f64]) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
    }

    /// Probability of success for a row laid out in the model's feature order.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        sigmoid(self.margin(row))
    }

    pub fn predict_proba(&self, catalog_id: &str, values: &[f64]) -> Result<f64, PredictorError> {
        if catalog_id != self.catalog_id || values.len() != self.feature_names.len() {
            return Err(PredictorError::CatalogMismatch {
                expected: self.catalog_id.clone(),
                found: catalog_id.to_string(),
            });
        }
        Ok(self.predict_row(values))
    }

    pub fn predict_matrix(&self, matrix: &LabeledMatrix) -> Result<Vec<f64>, PredictorError> {
        if matrix.catalog_id != self.catalog_id {
            return Err(PredictorError::CatalogMismatch {
                expected: self.catalog_id.clone(),
                found: matrix.catalog_id.clone(),
            });
        }
        Ok(matrix.rows.par_iter().map(|r| self.predict_row(&r.values)).collect())
    }

    /// For each feature, the indices of trees that split on it.
    pub fn trees_by_feature(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.feature_names.len()];
        for (t, tree) in self.trees.iter().enumerate() {
            for f in tree.features() {
                out[f].push(t);
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, PredictorError> {
        let model: Self = serde_json::from_str(text).map_err(|e| PredictorError::Format(e.to_string()))?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(PredictorError::Format(format!("unsupported model format {}", model.format_version)));
        }
        let d = model.feature_names.len();
        for tree in &model.trees {
            for node in &tree.nodes {
                match *node {
                    Node::Split { feature, left, right, .. }
                        if feature >= d || left >= tree.nodes.len() || right >= tree.nodes.len() =>
                    {
                        return Err(PredictorError::Format("tree refers to a missing feature or node".into()));
                    }
                    _ => {}
                }
            }
        }
        Ok(model)
    }
}

const NO_NODE: u32 = u32::MAX;
// splits below this are rounding noise
const MIN_GAIN: f64 = 1e-12;

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

#[derive(Clone, Copy, Default)]
struct Stats {
    g: f64,
    h: f64,
    n: usize,
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

/// Best split per active slot for one column.
#[allow(clippy::too_many_arguments)]
fn scan_column(
    col: &[f64],
    order: &[u32],
    slot_of: &[u32],
    grad: &[f64],
    hess: &[f64],
    totals: &[Stats],
    feature: usize,
    hp: &Hyperparameters,
) -> Vec<Option<Candidate>> {
    let k = totals.len();
    let mut left = vec![Stats::default(); k];
    let mut last: Vec<Option<f64>> = vec![None; k];
    let mut best: Vec<Option<Candidate>> = vec![None; k];
    for &r in order {
        let r = r as usize;
        let s = slot_of[r];
        if s == NO_NODE {
            continue;
        }
        let s = s as usize;
        let v = col[r];
        if let Some(prev) = last[s] {
            let l = left[s];
            let t = totals[s];
            if v > prev && l.n >= hp.min_samples_leaf && t.n - l.n >= hp.min_samples_leaf {
                let gain = 0.5
                    * (score(l.g, l.h, hp.lambda) + score(t.g - l.g, t.h - l.h, hp.lambda)
                        - score(t.g, t.h, hp.lambda));
                if gain > best[s].map_or(MIN_GAIN, |b| b.gain) {
                    let mid = prev + (v - prev) / 2.0;
                    let threshold = if mid > prev { mid } else { v };
                    best[s] = Some(Candidate { gain, feature, threshold });
                }
            }
        }
        left[s].g += grad[r];
        left[s].h += hess[r];
        left[s].n += 1;
        last[s] = Some(v);
    }
    best
}

struct Grower<'a> {
    cols: &'a [Vec<f64>],
    orders: &'a [Vec<u32>],
    hp: &'a Hyperparameters,
}

impl Grower<'_> {
    fn grow(&self, rows: &[usize], grad: &[f64], hess: &[f64]) -> Tree {
        let n = grad.len();
        let mut slot_of = vec![NO_NODE; n];
        for &r in rows {
            slot_of[r] = 0;
        }
        let mut nodes = vec![Node::Leaf { value: 0.0 }];
        let mut active: Vec<(usize, Stats)> = vec![(0, Self::stats(rows.iter().copied(), grad, hess))];
        let lambda = self.hp.lambda;
        for depth in 0..=self.hp.max_depth {
            if active.is_empty() {
                break;
            }
            let totals: Vec<Stats> = active.iter().map(|a| a.1).collect();
            let best = if depth == self.hp.max_depth {
                vec![None; active.len()]
            } else {
                let per_feature: Vec<Vec<Option<Candidate>>> = (0..self.cols.len())
                    .into_par_iter()
                    .map(|f| scan_column(&self.cols[f], &self.orders[f], &slot_of, grad, hess, &totals, f, self.hp))
                    .collect();
                // first feature wins ties
                let mut best: Vec<Option<Candidate>> = vec![None; active.len()];
                for cands in per_feature {
                    for (b, c) in best.iter_mut().zip(cands) {
                        if let Some(c) = c {
                            if b.is_none_or(|cur| c.gain > cur.gain) {
                                *b = Some(c);
                            }
                        }
                    }
                }
                best
            };

            let mut next_slot: Vec<(u32, u32)> = vec![(NO_NODE, NO_NODE); active.len()];
            let mut next_active = Vec::new();
            for (s, ((node_id, st), cand)) in active.iter().zip(&best).enumerate() {
                match cand {
                    Some(c) => {
                        let left = nodes.len();
                        nodes.push(Node::Leaf { value: 0.0 });
                        nodes.push(Node::Leaf { value: 0.0 });
                        nodes[*node_id] = Node::Split { feature: c.feature, threshold: c.threshold, left, right: left + 1 };
                        next_slot[s] = (next_active.len() as u32, next_active.len() as u32 + 1);
                        next_active.push((left, Stats::default()));
                        next_active.push((left + 1, Stats::default()));
                    }
                    None => nodes[*node_id] = Node::Leaf { value: -st.g / (st.h + lambda) },
                }
            }
            for &r in rows {
                let s = slot_of[r];
                if s == NO_NODE {
                    continue;
                }
                let s = s as usize;
                match best[s] {
                    Some(c) => {
                        let (l, rr) = next_slot[s];
                        let dest = if self.cols[c.feature][r] < c.threshold { l } else { rr };
                        slot_of[r] = dest;
                        let st = &mut next_active[dest as usize].1;
                        st.g += grad[r];
                        st.h += hess[r];
                        st.n += 1;
                    }
                    None => slot_of[r] = NO_NODE,
                }
            }
            active = next_active;
        }
        Tree { nodes }
    }

    fn stats(rows: impl Iterator<Item = usize>, grad: &[f64], hess: &[f64]) -> Stats {
        let mut s = Stats::default();
        for r in rows {
            s.g += grad[r];
            s.h += hess[r];
            s.n += 1;
        }
        s
    }
}

/// Fits the ensemble. Rows are visited in triple-id order, so the model does
/// not depend on how the matrix happens to be ordered.
pub fn train(matrix: &LabeledMatrix, hp: &Hyperparameters) -> Result<TreeEnsembleModel, PredictorError> {
    let mut rows: Vec<&super::LabeledRow> = matrix.rows.iter().collect();
    rows.sort_by(|a, b| a.id.cmp(&b.id));
    let n = rows.len();
    let positives = rows.iter().filter(|r| r.success == 1).count();
    if n == 0 || positives == 0 || positives == n {
        return Err(PredictorError::SingleClass);
    }
    if !(hp.subsample > 0.0 && hp.subsample <= 1.0) || hp.learning_rate <= 0.0 {
        return Err(PredictorError::Hyperparameters("subsample must be in (0, 1] and learning_rate positive".into()));
    }
    let d = matrix.feature_names.len();
    let y: Vec<f64> = rows.iter().map(|r| f64::from(r.success)).collect();
    let cols: Vec<Vec<f64>> = (0..d).map(|f| rows.iter().map(|r| r.values[f]).collect()).collect();
    let base_score = logit(positives as f64 / n as f64);

    let mut model = TreeEnsembleModel {
        format_version: MODEL_FORMAT_VERSION,
        catalog_id: matrix.catalog_id.clone(),
        feature_names: matrix.feature_names.clone(),
        base_score,
        learning_rate: hp.learning_rate,
        trees: Vec::new(),
        degenerate: false,
    };
    let varying = cols.iter().any(|c| c.iter().any(|&v| v != c[0]));
    if !varying {
        model.degenerate = true;
        return Ok(model);
    }

    let orders: Vec<Vec<u32>> = cols
        .par_iter()
        .map(|c| {
            let mut o: Vec<u32> = (0..n as u32).collect();
            o.sort_by(|&a, &b| c[a as usize].total_cmp(&c[b as usize]).then(a.cmp(&b)));
            o
        })
        .collect();
    let grower = Grower { cols: &cols, orders: &orders, hp };
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let take = ((n as f64 * hp.subsample).round() as usize).clamp(1, n);
    let mut margin = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    for _ in 0..hp.n_trees {
        for i in 0..n {
            let p = sigmoid(margin[i]);
            grad[i] = p - y[i];
            hess[i] = p * (1.0 - p);
        }
        let mut subset: Vec<usize> = if take == n { (0..n).collect() } else { sample(&mut rng, n, take).into_vec() };
        subset.sort_unstable();
        let tree = grower.grow(&subset, &grad, &hess);
        for (i, m) in margin.iter_mut().enumerate() {
            *m += hp.learning_rate * predict_column_major(&tree, &cols, i);
        }
        model.trees.push(tree);
    }
    Ok(model)
}

fn predict_column_major(tree: &Tree, cols: &[Vec<f64>], row: usize) -> f64 {
    let mut i = 0;
    loop {
        match tree.nodes[i] {
            Node::Leaf { value } => return value,
            Node::Split { feature, threshold, left, right } => {
                i = if cols[feature][row] < threshold { left } else { right };
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::{auroc, LabeledRow};
    use rand::Rng;

    fn matrix(rows: Vec<(Vec<f64>, u8)>) -> LabeledMatrix {
        let d = rows[0].0.len();
        LabeledMatrix::new(
            (0..d).map(|i| format!("f{i}")).collect(),
            rows.into_iter()
                .enumerate()
                .map(|(i, (values, success))| LabeledRow { id: format!("r{i:05}"), values, success })
                .collect(),
        )
        .unwrap()
    }

    fn small() -> Hyperparameters {
        Hyperparameters { n_trees: 30, min_samples_leaf: 5, ..Hyperparameters::default() }
    }

    #[test]
    fn empty_ensemble_is_logistic_of_base() {
        let m = TreeEnsembleModel {
            format_version: 1,
            catalog_id: "c".into(),
            feature_names: vec!["a".into()],
            base_score: 0.0,
            learning_rate: 0.1,
            trees: vec![],
            degenerate: false,
        };
        assert_eq!(m.predict_proba("c", &[3.0]).unwrap(), 0.5);
        let one = TreeEnsembleModel { trees: vec![Tree::leaf(2.0)], base_score: 0.3, ..m.clone() };
        let expect = 1.0 / (1.0 + (-(0.3 + 0.1 * 2.0f64)).exp());
        assert!((one.predict_row(&[0.0]) - expect).abs() < 1e-15);
        assert!(m.predict_proba("other", &[1.0]).is_err());
        assert!(m.predict_proba("c", &[1.0, 2.0]).is_err());
    }

    #[test]
    fn learns_a_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<(Vec<f64>, u8)> = (0..400)
            .map(|_| {
                let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let y = u8::from(x[2] > 0.1);
                (x, y)
            })
            .collect();
        let (train_rows, test_rows) = data.split_at(300);
        let model = train(&matrix(train_rows.to_vec()), &small()).unwrap();
        let test = matrix(test_rows.to_vec());
        let scores = model.predict_matrix(&test).unwrap();
        let labels: Vec<u8> = test.rows.iter().map(|r| r.success).collect();
        assert!(auroc(&scores, &labels).unwrap() >= 0.99);
        assert!(model.trees.iter().all(|t| t.features().iter().all(|&f| f < 4)));
        for r in &matrix(train_rows.to_vec()).rows {
            let p = model.predict_row(&r.values);
            assert_eq!(u8::from(p > 0.5), r.success);
        }
    }

    #[test]
    fn row_order_does_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<(Vec<f64>, u8)> = (0..120)
            .map(|_| {
                let x: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..1.0)).collect();
                let y = u8::from(x[0] + 0.3 * rng.gen::<f64>() > 0.6);
                (x, y)
            })
            .collect();
        let m = matrix(data);
        let mut reversed = m.clone();
        reversed.rows.reverse();
        assert_eq!(train(&m, &small()).unwrap(), train(&reversed, &small()).unwrap());
        assert_eq!(train(&m, &small()).unwrap().to_json(), train(&m, &small()).unwrap().to_json());
    }

    #[test]
    fn constant_columns_fall_back_to_base_rate() {
        let data = vec![(vec![1.0, 2.0], 1), (vec![1.0, 2.0], 0), (vec![1.0, 2.0], 0), (vec![1.0, 2.0], 0)];
        let model = train(&matrix(data), &small()).unwrap();
        assert!(model.degenerate);
        assert!(model.trees.is_empty());
        assert!((model.predict_row(&[1.0, 2.0]) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn single_class_rejected() {
        assert!(matches!(train(&matrix(vec![(vec![1.0], 1), (vec![2.0], 1)]), &small()), Err(PredictorError::SingleClass)));
    }

    #[test]
    fn leaves_respect_min_samples() {
        let data: Vec<(Vec<f64>, u8)> = (0..60).map(|i| (vec![i as f64], u8::from(i % 7 == 0))).collect();
        let m = matrix(data);
        let hp = Hyperparameters { n_trees: 5, subsample: 1.0, min_samples_leaf: 10, ..Hyperparameters::default() };
        let model = train(&m, &hp).unwrap();
        for tree in &model.trees {
            let mut counts = vec![0usize; tree.nodes.len()];
            for r in &m.rows {
                let mut i = 0;
                while let Node::Split { feature, threshold, left, right } = tree.nodes[i] {
                    i = if r.values[feature] < threshold { left } else { right };
                }
                counts[i] += 1;
            }
            for (i, node) in tree.nodes.iter().enumerate() {
                if matches!(node, Node::Leaf { .. }) {
                    assert!(counts[i] >= 10, "leaf {i} has {}", counts[i]);
                }
            }
        }
    }

    #[test]
    fn json_round_trip_and_validation() {
        let data: Vec<(Vec<f64>, u8)> = (0..80).map(|i| (vec![i as f64, (i % 3) as f64], u8::from(i > 40))).collect();
        let model = train(&matrix(data), &small()).unwrap();
        assert_eq!(TreeEnsembleModel::from_json(&model.to_json()).unwrap(), model);
        let mut bad = model.clone();
        bad.trees.push(Tree { nodes: vec![Node::Split { feature: 9, threshold: 0.0, left: 0, right: 0 }] });
        assert!(TreeEnsembleModel::from_json(&bad.to_json()).is_err());
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((logit(sigmoid(1.5)) - 1.5).abs() < 1e-12);
    }
}

//! Stage bodies. Each returns the run-relative paths it wrote.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::{BackendConfig, JudgeSplit, RunConfig};
use super::{PipelineError, Stage};
use crate::atomic::write_atomic;
use crate::corpus::{build_dataset, load_corpus, read_dataset, write_dataset, BuildReport, SplitManifest, Triple};
use crate::hashing::{sha256_hex, sha256_parts};
use crate::judge::{
    aggregate, aggregate_excluding_invalid, prompt_version, read_records, write_records, AggregateMetrics, HttpBackend,
    JudgeBackend, JudgeCache, JudgeRunner, MockBackend, MockRule,
};
use crate::metrics::{build_catalog, extract_batch, read_feature_matrix, write_feature_matrix, FeatureCatalog, FeatureMatrix, FeatureVector};
use crate::predictor::{
    auroc, read_scores, stratified_split, train, write_scores, LabeledMatrix, LabeledRow, PredictorError, ScoreRow,
    TreeEnsembleModel,
};
use crate::sage::{draw_background, estimate_sage, prune_and_retrain, Comparison, SageError, SageOptions};
use crate::sidecar::{Disassembler, OpcodeSequence, Sidecar, SidecarError, SidecarOptions};

/// Fraction of each model's labeled rows used for training.
pub const TRAIN_RATIO: f64 = 0.8;

pub(crate) const DATASET: &str = "corpus/dataset.jsonl";
pub(crate) const SPLIT: &str = "corpus/split.json";
pub(crate) const BUILD_REPORT: &str = "corpus/build_report.json";
pub(crate) const CATALOG: &str = "metrics/catalog.json";
pub(crate) const FEATURES: &str = "metrics/features.csv";

pub(crate) fn judge_records(model: &str) -> String {
    format!("judge/{model}/records.jsonl")
}
pub(crate) fn judge_metrics(model: &str) -> String {
    format!("judge/{model}/metrics.json")
}
pub(crate) fn predictor_file(model: &str, name: &str) -> String {
    format!("predictor/{model}/{name}")
}
pub(crate) fn sage_file(model: &str, name: &str) -> String {
    format!("sage/{model}/{name}")
}
pub(crate) fn shadow_evaluation(model: &str) -> String {
    format!("shadow/{model}/evaluation.json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeMetricsFile {
    pub model_id: String,
    pub prompt_version: String,
    pub split: JudgeSplit,
    pub metrics: AggregateMetrics,
    /// Metrics over records with a valid verdict; absent if there are none.
    pub metrics_excluding_invalid: Option<AggregateMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorSummary {
    pub model_id: String,
    /// `trained` or `skipped`.
    pub status: String,
    pub reason: Option<String>,
    pub n_labeled: usize,
    pub n_positive: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub split_seed: u64,
    pub test_auroc: Option<f64>,
    pub degenerate: bool,
    pub n_trees: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SageSummary {
    pub model_id: String,
    pub status: String,
    pub reason: Option<String>,
    pub comparison: Option<Comparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowEvaluation {
    pub model_id: String,
    pub n_scored: usize,
    pub n_positive: usize,
    pub auroc: f64,
    pub accuracy_at_half: f64,
    pub scores_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SplitFile {
    seed: u64,
    ratio: f64,
    train: Vec<String>,
    test: Vec<String>,
}

pub(crate) fn sidecar_options(config: &RunConfig, disable_run: bool) -> SidecarOptions {
    SidecarOptions { python: config.python.clone(), disable_run }
}

/// Hash over every program file's relative path and content.
pub(crate) fn corpus_tree_hash(root: &Path) -> Result<String, PipelineError> {
    let unreadable = |e: std::io::Error| PipelineError::Config(format!("cannot read corpus_root {}: {e}", root.display()));
    let mut dirs: Vec<_> = fs::read_dir(root).map_err(unreadable)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    dirs.sort();
    let mut parts = Vec::new();
    for dir in dirs {
        let mut files: Vec<_> = fs::read_dir(&dir)
            .map_err(|e| PipelineError::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "py"))
            .collect();
        files.sort();
        for f in files {
            let bytes = fs::read(&f).map_err(|e| PipelineError::io(&f, e))?;
            parts.push(f.strip_prefix(root).unwrap_or(&f).to_string_lossy().into_owned());
            parts.push(sha256_hex(&bytes));
        }
    }
    Ok(sha256_parts(&parts))
}

/// The configuration a stage's output depends on. Worker counts and other
/// scheduling knobs are left out.
pub(crate) fn stage_config(config: &RunConfig, stage: Stage, interpreter: Option<&str>) -> Value {
    match stage {
        Stage::Corpus => {
            let mut build = serde_json::to_value(config.build_config()).expect("build config serializes");
            if let Some(obj) = build.as_object_mut() {
                obj.remove("workers");
            }
            json!({ "build": build, "interpreter": interpreter })
        }
        Stage::Metrics => json!({ "interpreter": interpreter }),
        Stage::Judge => json!({
            "models": config.judge.models,
            "split": config.judge.split,
            "prompt_version": prompt_version(),
        }),
        Stage::Predictor => json!({
            "hyperparameters": config.hyperparameters(),
            "split_seed": config.seeds.split,
            "ratio": TRAIN_RATIO,
        }),
        Stage::Sage => json!({
            "sage": config.sage,
            "seed": config.seeds.sage,
            "hyperparameters": config.hyperparameters(),
        }),
        Stage::Shadow => json!({ "models": config.shadow.scores.keys().collect::<Vec<_>>() }),
    }
}

fn write_text(run_dir: &Path, rel: &str, text: &str) -> Result<(), PipelineError> {
    let path = run_dir.join(rel);
    write_atomic(&path, text.as_bytes()).map_err(|e| PipelineError::io(&path, e))
}

fn write_json<T: Serialize>(run_dir: &Path, rel: &str, value: &T) -> Result<(), PipelineError> {
    write_text(run_dir, rel, &(serde_json::to_string_pretty(value).expect("artifact serializes") + "\n"))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(run_dir: &Path, rel: &str) -> Result<T, PipelineError> {
    let path = run_dir.join(rel);
    let text = fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Artifact(format!("{rel}: {e}")))
}

/// Runs one stage after clearing its output directory.
pub(crate) fn run(config: &RunConfig, stage: Stage) -> Result<Vec<String>, PipelineError> {
    let out_dir = config.run_dir().join(stage.name());
    if out_dir.exists() {
        fs::remove_dir_all(&out_dir).map_err(|e| PipelineError::io(&out_dir, e))?;
    }
    match stage {
        Stage::Corpus => run_corpus(config),
        Stage::Metrics => run_metrics(config),
        Stage::Judge => run_judge(config),
        Stage::Predictor => run_predictor(config),
        Stage::Sage => run_sage(config),
        Stage::Shadow => run_shadow(config),
    }
}

fn run_corpus(config: &RunConfig) -> Result<Vec<String>, PipelineError> {
    let programs = load_corpus(&config.corpus_root())?;
    let options = sidecar_options(config, false);
    let built = build_dataset(&programs, &config.build_config(), || Sidecar::spawn(&options))?;
    let dir = &config.run_dir();
    write_dataset(&dir.join(DATASET), &built.triples)?;
    write_json(dir, SPLIT, &built.split)?;
    write_json::<BuildReport>(dir, BUILD_REPORT, &built.report)?;
    tracing::info!(
        triples = built.triples.len(),
        nondeterministic_inputs = built.report.nondeterministic_inputs,
        no_donor_positives = built.report.no_donor_positives.len(),
        "dataset built"
    );
    Ok(vec![DATASET.into(), SPLIT.into(), BUILD_REPORT.into()])
}

/// Disassembles each distinct code string on a pool of run-disabled sidecars.
/// Syntax errors reported by the sidecar yield the empty sequence; transport
/// failures abort.
pub fn disassemble_parallel(codes: &[&str], options: &SidecarOptions, workers: usize) -> Result<HashMap<String, OpcodeSequence>, SidecarError> {
    let distinct: Vec<&str> = codes.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if distinct.is_empty() {
        return Ok(HashMap::new());
    }
    let chunk = distinct.len().div_ceil(workers.max(1));
    let results: Vec<Result<Vec<(String, OpcodeSequence)>, SidecarError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = distinct
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    let mut sidecar = Sidecar::spawn(options)?;
                    let mut out = Vec::with_capacity(part.len());
                    for &code in part {
                        let ops = match sidecar.disassemble(code) {
                            Ok(ops) => ops,
                            Err(e) if e.is_transport() => return Err(e),
                            Err(e) => {
                                tracing::debug!(error = %e, "disassembly failed");
                                OpcodeSequence::default()
                            }
                        };
                        out.push((code.to_string(), ops));
                    }
                    Ok(out)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("disassembly worker panicked")).collect()
    });
    let mut map = HashMap::new();
    for r in results {
        map.extend(r?);
    }
    Ok(map)
}

/// Freezes the catalog on the training-split triples and extracts every
/// triple's vector. Rows come back sorted by triple id.
pub fn extract_features(
    triples: &[Triple],
    split: &SplitManifest,
    sidecar: &SidecarOptions,
    workers: usize,
) -> Result<(FeatureCatalog, Vec<(String, FeatureVector)>), PipelineError> {
    let codes: Vec<&str> = triples.iter().map(|t| t.code.as_str()).collect();
    let opcodes = disassemble_parallel(&codes, sidecar, workers)?;
    let training: Vec<Triple> = triples.iter().filter(|t| split.is_train(&t.problem_id)).cloned().collect();
    let train_codes: BTreeSet<&str> = training.iter().map(|t| t.code.as_str()).collect();
    let train_ops: Vec<OpcodeSequence> = train_codes.iter().filter_map(|c| opcodes.get(*c).cloned()).collect();
    let catalog = build_catalog(&training, &train_ops)?;
    let vectors = extract_batch(triples, &opcodes, &catalog);
    let mut rows: Vec<_> = triples.iter().map(|t| t.id()).zip(vectors).collect();
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    Ok((catalog, rows))
}

fn run_metrics(config: &RunConfig) -> Result<Vec<String>, PipelineError> {
    let dir = &config.run_dir();
    let triples = read_dataset(&dir.join(DATASET))?;
    let split: SplitManifest = read_json(dir, SPLIT)?;
    let (catalog, rows) = extract_features(&triples, &split, &sidecar_options(config, true), config.workers)?;
    catalog.write(&dir.join(CATALOG))?;
    write_feature_matrix(&dir.join(FEATURES), &catalog, &rows)?;
    tracing::info!(features = catalog.len(), rows = rows.len(), "features extracted");
    Ok(vec![CATALOG.into(), FEATURES.into()])
}

/// Backend described by a model's configuration.
pub fn backend_for(backend: &BackendConfig) -> Result<Box<dyn JudgeBackend>, PipelineError> {
    Ok(match backend {
        BackendConfig::Mock(rule) => {
            Box::new(MockBackend { rule: rule.parse::<MockRule>().map_err(|e| PipelineError::Config(e.to_string()))? })
        }
        BackendConfig::Http(http) => Box::new(HttpBackend::new(http)?),
    })
}

fn run_judge(config: &RunConfig) -> Result<Vec<String>, PipelineError> {
    let dir = &config.run_dir();
    let triples = read_dataset(&dir.join(DATASET))?;
    let split: SplitManifest = read_json(dir, SPLIT)?;
    let selected: Vec<Triple> = triples
        .into_iter()
        .filter(|t| match config.judge.split {
            JudgeSplit::All => true,
            JudgeSplit::Train => split.is_train(&t.problem_id),
            JudgeSplit::Eval => split.is_eval(&t.problem_id),
        })
        .collect();
    let mut written = Vec::new();
    for model in &config.judge.models {
        let backend = backend_for(&model.backend)?;
        // a changed backend under the same model id must not reuse old verdicts
        let backend_key = sha256_hex(serde_json::to_string(&model.backend).expect("backend serializes").as_bytes());
        let cache = JudgeCache::new(config.judge_cache_dir().join(&model.id).join(&backend_key[..16]));
        let runner = JudgeRunner::new(backend.as_ref(), &model.id, config.judge.options.clone(), Some(cache));
        let records = runner.judge_all(&selected);
        tracing::info!(model = %model.id, records = records.len(), backend_calls = runner.backend_calls(), "judged");
        let metrics = JudgeMetricsFile {
            model_id: model.id.clone(),
            prompt_version: prompt_version().to_string(),
            split: config.judge.split,
            metrics: aggregate(&records)?,
            metrics_excluding_invalid: aggregate_excluding_invalid(&records).ok(),
        };
        let rec_path = judge_records(&model.id);
        write_records(&dir.join(&rec_path), &records)?;
        write_json(dir, &judge_metrics(&model.id), &metrics)?;
        written.push(rec_path);
        written.push(judge_metrics(&model.id));
    }
    Ok(written)
}

/// Features joined with one model's success labels, in id order.
fn labeled_matrix(dir: &Path, features: &FeatureMatrix, model: &str) -> Result<LabeledMatrix, PipelineError> {
    let records = read_records(&dir.join(judge_records(model)))?;
    let success: BTreeMap<String, u8> = records.into_iter().map(|r| (r.triple_id, r.success)).collect();
    Ok(LabeledMatrix::join(features, &success)?)
}

fn check_catalog(dir: &Path, features: &FeatureMatrix) -> Result<(), PipelineError> {
    let catalog = FeatureCatalog::read(&dir.join(CATALOG))?;
    if catalog.names != features.names {
        return Err(PipelineError::Artifact(format!("{FEATURES} columns do not match {CATALOG}")));
    }
    Ok(())
}

fn run_predictor(config: &RunConfig) -> Result<Vec<String>, PipelineError> {
    let dir = &config.run_dir();
    let features = read_feature_matrix(&dir.join(FEATURES))?;
    check_catalog(dir, &features)?;
    let hp = config.hyperparameters();
    let mut written = Vec::new();
    for model in &config.judge.models {
        let id = &model.id;
        let matrix = labeled_matrix(dir, &features, id)?;
        let mut summary = PredictorSummary {
            model_id: id.clone(),
            status: "skipped".into(),
            reason: None,
            n_labeled: matrix.len(),
            n_positive: matrix.positives(),
            n_train: 0,
            n_test: 0,
            split_seed: config.seeds.split,
            test_auroc: None,
            degenerate: false,
            n_trees: 0,
        };
        let split = stratified_split(&matrix, TRAIN_RATIO, config.seeds.split);
        let (train_m, test_m) = match split {
            Ok(parts) if parts.1.positives() > 0 && parts.1.positives() < parts.1.len() && parts.0.positives() > 0 && parts.0.positives() < parts.0.len() => parts,
            Ok(_) | Err(PredictorError::SingleClass) => {
                summary.reason = Some("success labels do not contain both classes in both splits".into());
                tracing::warn!(model = %id, "predictor skipped: single-class labels");
                write_json(dir, &predictor_file(id, "summary.json"), &summary)?;
                written.push(predictor_file(id, "summary.json"));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let model_fit = train(&train_m, &hp)?;
        let scores = model_fit.predict_matrix(&test_m)?;
        let test_auroc = auroc(&scores, &test_m.labels())?;
        let score_rows: Vec<ScoreRow> = test_m
            .rows
            .iter()
            .zip(&scores)
            .map(|(r, &s)| ScoreRow { triple_id: r.id.clone(), score: s, label: Some(r.success) })
            .collect();
        let split_file = SplitFile {
            seed: config.seeds.split,
            ratio: TRAIN_RATIO,
            train: train_m.rows.iter().map(|r| r.id.clone()).collect(),
            test: test_m.rows.iter().map(|r| r.id.clone()).collect(),
        };
        summary.status = "trained".into();
        summary.n_train = train_m.len();
        summary.n_test = test_m.len();
        summary.test_auroc = Some(test_auroc);
        summary.degenerate = model_fit.degenerate;
        summary.n_trees = model_fit.trees.len();

        write_text(dir, &predictor_file(id, "model.json"), &model_fit.to_json())?;
        write_json(dir, &predictor_file(id, "split.json"), &split_file)?;
        let scores_path = dir.join(predictor_file(id, "test_scores.csv"));
        write_scores(&scores_path, &score_rows)?;
        write_json(dir, &predictor_file(id, "summary.json"), &summary)?;
        for name in ["model.json", "split.json", "test_scores.csv", "summary.json"] {
            written.push(predictor_file(id, name));
        }
    }
    Ok(written)
}

fn rows_with_ids(matrix: &LabeledMatrix, ids: &[String]) -> Result<LabeledMatrix, PipelineError> {
    let wanted: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
    let rows: Vec<LabeledRow> = matrix.rows.iter().filter(|r| wanted.contains(r.id.as_str())).cloned().collect();
    if rows.len() != wanted.len() {
        return Err(PipelineError::Artifact("predictor split names triples without labeled features".into()));
    }
    Ok(LabeledMatrix::new(matrix.feature_names.clone(), rows)?)
}

fn run_sage(config: &RunConfig) -> Result<Vec<String>, PipelineError> {
    let dir = &config.run_dir();
    let features = read_feature_matrix(&dir.join(FEATURES))?;
    let hp = config.hyperparameters();
    let mut written = Vec::new();
    for model in &config.judge.models {
        let id = &model.id;
        let pred: PredictorSummary = read_json(dir, &predictor_file(id, "summary.json"))?;
        let mut summary = SageSummary { model_id: id.clone(), status: "skipped".into(), reason: None, comparison: None };
        if pred.status != "trained" {
            summary.reason = Some("no trained predictor".into());
            write_json(dir, &sage_file(id, "summary.json"), &summary)?;
            written.push(sage_file(id, "summary.json"));
            continue;
        }
        let matrix = labeled_matrix(dir, &features, id)?;
        let split: SplitFile = read_json(dir, &predictor_file(id, "split.json"))?;
        let train_m = rows_with_ids(&matrix, &split.train)?;
        let test_m = rows_with_ids(&matrix, &split.test)?;
        let model_text = fs::read_to_string(dir.join(predictor_file(id, "model.json"))).map_err(|e| PipelineError::io(&dir.join(predictor_file(id, "model.json")), e))?;
        let full = TreeEnsembleModel::from_json(&model_text)?;

        let options = SageOptions { n_permutations: config.sage.n_permutations, background_size: config.sage.background_size, seed: config.seeds.sage };
        let background = draw_background(&train_m, options.background_size, options.seed);
        let report = estimate_sage(&full, &test_m, &background, &options)?;
        write_text(dir, &sage_file(id, "report.json"), &report.to_json())?;
        write_text(dir, &sage_file(id, "top_features.md"), &report.markdown_table(config.sage.top_k))?;
        written.push(sage_file(id, "report.json"));
        written.push(sage_file(id, "top_features.md"));

        match prune_and_retrain(&train_m, &test_m, &full, &report, &hp, config.sage.threshold) {
            Ok((comparison, pruned_model)) => {
                write_text(dir, &sage_file(id, "pruned_model.json"), &pruned_model.to_json())?;
                written.push(sage_file(id, "pruned_model.json"));
                summary.status = "pruned".into();
                summary.comparison = Some(comparison);
            }
            Err(SageError::NoPositiveValues { max }) => {
                summary.reason = Some(format!("no feature has a positive SAGE value (largest {max})"));
            }
            Err(e) => return Err(e.into()),
        }
        write_json(dir, &sage_file(id, "summary.json"), &summary)?;
        written.push(sage_file(id, "summary.json"));
    }
    Ok(written)
}

fn run_shadow(config: &RunConfig) -> Result<Vec<String>, PipelineError> {
    let dir = &config.run_dir();
    let mut written = Vec::new();
    for (model, path) in &config.shadow.scores {
        let path = &config.resolve(path);
        let records = read_records(&dir.join(judge_records(model)))?;
        let success: BTreeMap<&str, u8> = records.iter().map(|r| (r.triple_id.as_str(), r.success)).collect();
        let rows = read_scores(path)?;
        let mut scores = Vec::with_capacity(rows.len());
        let mut labels = Vec::with_capacity(rows.len());
        for r in &rows {
            let Some(&s) = success.get(r.triple_id.as_str()) else {
                return Err(PipelineError::Artifact(format!("{}: triple {} was not judged by {model}", path.display(), r.triple_id)));
            };
            if r.label.is_some_and(|l| l != s) {
                return Err(PipelineError::Artifact(format!("{}: label of {} disagrees with the judge records", path.display(), r.triple_id)));
            }
            scores.push(r.score);
            labels.push(s);
        }
        let value = auroc(&scores, &labels)?;
        let correct = scores.iter().zip(&labels).filter(|(s, l)| u8::from(**s >= 0.5) == **l).count();
        let eval = ShadowEvaluation {
            model_id: model.clone(),
            n_scored: rows.len(),
            n_positive: labels.iter().filter(|&&l| l == 1).count(),
            auroc: value,
            accuracy_at_half: correct as f64 / rows.len() as f64,
            scores_sha256: sha256_hex(&fs::read(path).map_err(|e| PipelineError::io(path, e))?),
        };
        write_json(dir, &shadow_evaluation(model), &eval)?;
        written.push(shadow_evaluation(model));
    }
    Ok(written)
}

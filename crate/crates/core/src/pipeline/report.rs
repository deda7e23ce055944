//! Run summary built only from artifacts already on disk.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::manifest::RunManifest;
use super::stages::{self, read_json, JudgeMetricsFile, PredictorSummary, SageSummary, ShadowEvaluation};
use super::PipelineError;
use crate::judge::AggregateMetrics;
use crate::sage::{SageReport, SageValue};

pub const REPORT_JSON: &str = "report/summary.json";
pub const REPORT_MD: &str = "report/report.md";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SageTotals {
    pub sum_of_values: f64,
    pub base_minus_full_loss: f64,
    pub total_std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model_id: String,
    pub judge: Option<AggregateMetrics>,
    pub predictor: Option<PredictorSummary>,
    pub sage: Option<SageSummary>,
    pub sage_totals: Option<SageTotals>,
    pub top_features: Option<Vec<SageValue>>,
    pub shadow: Option<ShadowEvaluation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub interpreter_version: Option<String>,
    pub stages_run: Vec<String>,
    pub models: Vec<ModelSummary>,
}

/// Reads an artifact if its stage has a record listing it.
fn recorded<T: for<'de> Deserialize<'de>>(run_dir: &Path, manifest: &RunManifest, stage: &str, rel: &str) -> Result<Option<T>, PipelineError> {
    let listed = manifest.stages.get(stage).is_some_and(|r| r.artifacts.contains_key(rel));
    if !listed {
        return Ok(None);
    }
    read_json(run_dir, rel).map(Some)
}

pub fn build_summary(run_dir: &Path, top_k: usize) -> Result<RunSummary, PipelineError> {
    let manifest = RunManifest::load(run_dir)?;
    let mut model_ids: Vec<String> = manifest
        .stages
        .get("judge")
        .map(|r| {
            r.artifacts
                .keys()
                .filter_map(|k| k.strip_prefix("judge/")?.strip_suffix("/metrics.json").map(str::to_string))
                .collect()
        })
        .unwrap_or_default();
    model_ids.sort();

    let mut models = Vec::new();
    for id in model_ids {
        let judge: Option<JudgeMetricsFile> = recorded(run_dir, &manifest, "judge", &stages::judge_metrics(&id))?;
        let predictor = recorded(run_dir, &manifest, "predictor", &stages::predictor_file(&id, "summary.json"))?;
        let sage = recorded(run_dir, &manifest, "sage", &stages::sage_file(&id, "summary.json"))?;
        let report: Option<SageReport> = recorded(run_dir, &manifest, "sage", &stages::sage_file(&id, "report.json"))?;
        let shadow = recorded(run_dir, &manifest, "shadow", &stages::shadow_evaluation(&id))?;
        let sage_totals = report.as_ref().map(|r| SageTotals {
            sum_of_values: r.total(),
            base_minus_full_loss: r.base_loss - r.full_loss,
            total_std_error: r.total_std_error,
        });
        let top_features = report.as_ref().map(|r| r.ranked().into_iter().take(top_k).cloned().collect());
        models.push(ModelSummary {
            model_id: id,
            judge: judge.map(|j| j.metrics),
            predictor,
            sage,
            sage_totals,
            top_features,
            shadow,
        });
    }
    Ok(RunSummary {
        config_hash: manifest.config_hash.clone(),
        interpreter_version: manifest.interpreter_version.clone(),
        stages_run: manifest.stages.keys().cloned().collect(),
        models,
    })
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}")).unwrap_or_else(|| "n/a".into())
}

pub fn render_markdown(s: &RunSummary) -> String {
    let mut md = String::from("# Run report\n\n");
    let _ = writeln!(md, "Interpreter: {}\n", s.interpreter_version.as_deref().unwrap_or("unknown"));
    let ran = |stage: &str| s.stages_run.iter().any(|x| x == stage);

    md.push_str("## Judge metrics\n\n");
    if !ran("judge") {
        md.push_str("absent\n\n");
    } else {
        md.push_str("| model | accuracy | precision | recall | F1 | invalid | total |\n|---|---:|---:|---:|---:|---:|---:|\n");
        for m in &s.models {
            match &m.judge {
                Some(j) => {
                    let _ = writeln!(md, "| {} | {:.3} | {:.3} | {:.3} | {:.3} | {} | {} |", m.model_id, j.accuracy, j.precision, j.recall, j.f1, j.invalid, j.total);
                }
                None => {
                    let _ = writeln!(md, "| {} | absent | | | | | |", m.model_id);
                }
            }
        }
        md.push('\n');
    }

    md.push_str("## Success predictor\n\n");
    if !ran("predictor") {
        md.push_str("absent\n\n");
    } else {
        md.push_str("| model | status | labeled | train | test | test AUROC |\n|---|---|---:|---:|---:|---:|\n");
        for m in &s.models {
            match &m.predictor {
                Some(p) => {
                    let _ = writeln!(md, "| {} | {} | {} | {} | {} | {} |", m.model_id, p.status, p.n_labeled, p.n_train, p.n_test, opt(p.test_auroc, 4));
                }
                None => {
                    let _ = writeln!(md, "| {} | absent | | | | |", m.model_id);
                }
            }
        }
        md.push('\n');
    }

    md.push_str("## Feature pruning\n\n");
    if !ran("sage") {
        md.push_str("absent\n\n");
    } else {
        md.push_str("| model | full AUROC | pruned AUROC | retained | retained fraction | top feature share |\n|---|---:|---:|---:|---:|---:|\n");
        for m in &s.models {
            match m.sage.as_ref().and_then(|x| x.comparison.as_ref()) {
                Some(c) => {
                    let _ = writeln!(
                        md,
                        "| {} | {:.4} | {:.4} | {} of {} | {:.3} | {:.3} |",
                        m.model_id, c.full_auroc, c.pruned_auroc, c.retained_count, c.n_features, c.retained_fraction, c.top_feature_share
                    );
                }
                None => {
                    let why = m.sage.as_ref().and_then(|x| x.reason.clone()).unwrap_or_else(|| "absent".into());
                    let _ = writeln!(md, "| {} | {why} | | | | |", m.model_id);
                }
            }
        }
        md.push('\n');
        for m in &s.models {
            let (Some(top), Some(t)) = (&m.top_features, &m.sage_totals) else { continue };
            let _ = writeln!(md, "### Top features: {}\n", m.model_id);
            let _ = writeln!(
                md,
                "Sum of values {:.6} nats; base minus full loss {:.6} nats; std. error of the total {:.6}.\n",
                t.sum_of_values, t.base_minus_full_loss, t.total_std_error
            );
            md.push_str("| rank | feature | SAGE value (nats) | std. error |\n|---:|---|---:|---:|\n");
            for (i, f) in top.iter().enumerate() {
                let _ = writeln!(md, "| {} | `{}` | {:.6} | {:.6} |", i + 1, f.name, f.value, f.std_error);
            }
            md.push('\n');
        }
    }

    md.push_str("## Shadow models\n\n");
    if !ran("shadow") {
        md.push_str("not run\n");
    } else {
        md.push_str("| model | AUROC | scored | accuracy at 0.5 |\n|---|---:|---:|---:|\n");
        for m in &s.models {
            match &m.shadow {
                Some(e) => {
                    let _ = writeln!(md, "| {} | {:.4} | {} | {:.3} |", m.model_id, e.auroc, e.n_scored, e.accuracy_at_half);
                }
                None => {
                    let _ = writeln!(md, "| {} | not run | | |", m.model_id);
                }
            }
        }
    }
    md
}

/// Writes `report/summary.json` and `report/report.md`.
pub fn write_report(run_dir: &Path, top_k: usize) -> Result<RunSummary, PipelineError> {
    let summary = build_summary(run_dir, top_k)?;
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    for (rel, text) in [(REPORT_JSON, json), (REPORT_MD, render_markdown(&summary))] {
        let path = run_dir.join(rel);
        crate::atomic::write_atomic(&path, text.as_bytes()).map_err(|e| PipelineError::io(&path, e))?;
    }
    Ok(summary)
}

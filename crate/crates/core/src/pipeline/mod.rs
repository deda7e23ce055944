//! End-to-end orchestration over a run directory.
//!
//! Stages form a fixed DAG (corpus, metrics, judge, predictor, sage, and the
//! optional shadow import). Each stage writes its artifacts atomically and
//! records their hashes, together with the hashes of everything it consumed,
//! in `manifest.json`. A stage whose record still matches is skipped; a stage
//! whose upstream no longer matches refuses to run.
//!
//! Layout:
//!
//! ```text
//! config.json  manifest.json
//! corpus/{dataset.jsonl, split.json, build_report.json}
//! metrics/{catalog.json, features.csv}
//! judge/<model>/{records.jsonl, metrics.json}
//! predictor/<model>/{summary.json, model.json, split.json, test_scores.csv}
//! sage/<model>/{summary.json, report.json, pruned_model.json, top_features.md}
//! shadow/<model>/evaluation.json
//! report/{summary.json, report.md}
//! ```

mod config;
mod manifest;
mod report;
mod stages;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::corpus::CorpusError;
use crate::hashing::sha256_hex;
use crate::judge::JudgeError;
use crate::metrics::MetricsError;
use crate::predictor::PredictorError;
use crate::sage::SageError;
use crate::sidecar::SidecarError;

pub use config::{BackendConfig, JudgeConfig, JudgeSplit, ModelConfig, RunConfig, SageSettings, Seeds, ShadowConfig, StageToggles};
pub use manifest::{file_hash, RunLock, RunManifest, StageRecord, CONFIG_FILE, MANIFEST_FILE};
pub use report::{build_summary, render_markdown, write_report, ModelSummary, RunSummary, SageTotals, REPORT_JSON, REPORT_MD};
pub use stages::{backend_for, disassemble_parallel, extract_features, JudgeMetricsFile, PredictorSummary, SageSummary, ShadowEvaluation, TRAIN_RATIO};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("stage {stage} needs {missing}, which has not run")]
    MissingDependency { stage: Stage, missing: Stage },
    #[error("stage {stage} refuses to run: upstream {upstream} is stale:\n{}", .diff.join("\n"))]
    StaleUpstream { stage: Stage, upstream: Stage, diff: Vec<String> },
    #[error("run directory is locked by another process ({0})")]
    Locked(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad artifact: {0}")]
    Artifact(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Sage(#[from] SageError),
    #[error(transparent)]
    Sidecar(#[from] SidecarError),
}

impl PipelineError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io { path: path.to_path_buf(), source }
    }

    /// Process exit status: 2 for configuration errors, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Corpus,
    Metrics,
    Judge,
    Predictor,
    Sage,
    Shadow,
}

impl Stage {
    pub const ALL: [Stage; 6] = [Stage::Corpus, Stage::Metrics, Stage::Judge, Stage::Predictor, Stage::Sage, Stage::Shadow];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Corpus => "corpus",
            Stage::Metrics => "metrics",
            Stage::Judge => "judge",
            Stage::Predictor => "predictor",
            Stage::Sage => "sage",
            Stage::Shadow => "shadow",
        }
    }

    /// Stages whose artifacts this stage reads.
    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Corpus => &[],
            Stage::Metrics => &[Stage::Corpus],
            Stage::Judge => &[Stage::Corpus],
            Stage::Predictor => &[Stage::Metrics, Stage::Judge],
            Stage::Sage => &[Stage::Metrics, Stage::Judge, Stage::Predictor],
            Stage::Shadow => &[Stage::Judge],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| PipelineError::Config(format!("unknown stage {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StageOutcome {
    Ran,
    UpToDate,
    Disabled,
}

/// An open run directory, locked for the lifetime of this value.
pub struct Pipeline {
    pub config: RunConfig,
    run_dir: PathBuf,
    manifest: RunManifest,
    interpreter_checked: bool,
    _lock: RunLock,
}

impl Pipeline {
    pub fn open(config: RunConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let run_dir = config.run_dir();
        let lock = RunLock::acquire(&run_dir)?;
        let mut manifest = RunManifest::load(&run_dir)?;
        let text = config.to_json();
        let path = run_dir.join(CONFIG_FILE);
        if std::fs::read_to_string(&path).ok().as_deref() != Some(text.as_str()) {
            crate::atomic::write_atomic(&path, text.as_bytes()).map_err(|e| PipelineError::io(&path, e))?;
        }
        manifest.config_hash = sha256_hex(text.as_bytes());
        Ok(Pipeline { config, run_dir, manifest, interpreter_checked: false, _lock: lock })
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn enabled(&self, stage: Stage) -> bool {
        let t = &self.config.stages;
        match stage {
            Stage::Corpus => t.corpus,
            Stage::Metrics => t.metrics,
            Stage::Judge => t.judge,
            Stage::Predictor => t.predictor,
            Stage::Sage => t.sage,
            Stage::Shadow => t.shadow,
        }
    }

    /// Every enabled stage in DAG order, then the report.
    pub fn run_all(&mut self) -> Result<Vec<(Stage, StageOutcome)>, PipelineError> {
        let mut out = Vec::new();
        for stage in Stage::ALL {
            let outcome = if self.enabled(stage) { self.run_stage(stage)? } else { StageOutcome::Disabled };
            tracing::info!(%stage, ?outcome, "stage finished");
            out.push((stage, outcome));
        }
        write_report(self.run_dir(), self.config.sage.top_k)?;
        Ok(out)
    }

    /// Current inputs of a stage: upstream artifact hashes plus external inputs.
    fn current_inputs(&self, stage: Stage) -> Result<BTreeMap<String, String>, PipelineError> {
        let mut inputs = BTreeMap::new();
        for up in stage.upstream() {
            if let Some(rec) = self.manifest.stages.get(up.name()) {
                inputs.extend(rec.artifacts.iter().map(|(k, v)| (k.clone(), v.clone())));
            }
        }
        match stage {
            Stage::Corpus => {
                inputs.insert("<corpus_root>".into(), stages::corpus_tree_hash(&self.config.corpus_root())?);
            }
            Stage::Shadow => {
                for (model, path) in &self.config.shadow.scores {
                    let path = self.config.resolve(path);
                    let hash = file_hash(&path).ok_or_else(|| PipelineError::Config(format!("cannot read shadow scores {}", path.display())))?;
                    inputs.insert(format!("<shadow:{model}>"), hash);
                }
            }
            _ => {}
        }
        Ok(inputs)
    }

    fn config_hash(&self, stage: Stage) -> String {
        let v = stages::stage_config(&self.config, stage, self.manifest.interpreter_version.as_deref());
        sha256_hex(v.to_string().as_bytes())
    }

    /// Why `stage`'s record does not match the current state, if it does not.
    fn staleness(&self, stage: Stage) -> Result<Option<Vec<String>>, PipelineError> {
        let Some(rec) = self.manifest.stages.get(stage.name()) else {
            return Ok(Some(vec!["no record".into()]));
        };
        let mut diff: Vec<String> = self
            .manifest
            .drifted_artifacts(self.run_dir(), stage.name())
            .into_iter()
            .map(|(p, want, got)| format!("  {p}: recorded {want}, found {got}"))
            .collect();
        if rec.config_hash != self.config_hash(stage) {
            diff.push("  configuration changed".into());
        }
        let inputs = self.current_inputs(stage)?;
        for (k, v) in &inputs {
            match rec.inputs.get(k) {
                Some(old) if old == v => {}
                Some(old) => diff.push(format!("  input {k}: was {old}, now {v}")),
                None => diff.push(format!("  input {k}: new")),
            }
        }
        for k in rec.inputs.keys().filter(|k| !inputs.contains_key(*k)) {
            diff.push(format!("  input {k}: gone"));
        }
        for up in stage.upstream() {
            if self.staleness(*up)?.is_some() {
                diff.push(format!("  upstream {up} is out of date"));
            }
        }
        Ok((!diff.is_empty()).then_some(diff))
    }

    pub fn is_complete(&self, stage: Stage) -> Result<bool, PipelineError> {
        Ok(self.staleness(stage)?.is_none())
    }

    /// Queries the interpreter once per open pipeline. A different version
    /// than the recorded one invalidates the corpus and metrics stages.
    fn check_interpreter(&mut self) -> Result<(), PipelineError> {
        if !self.interpreter_checked {
            let mut sidecar = crate::sidecar::Sidecar::spawn(&stages::sidecar_options(&self.config, true))?;
            let version = sidecar.interpreter_version()?;
            if self.manifest.interpreter_version.as_deref().is_some_and(|v| v != version) {
                tracing::warn!(recorded = ?self.manifest.interpreter_version, found = %version, "interpreter version changed");
            }
            self.manifest.interpreter_version = Some(version);
            self.interpreter_checked = true;
        }
        Ok(())
    }

    pub fn run_stage(&mut self, stage: Stage) -> Result<StageOutcome, PipelineError> {
        self.check_interpreter()?;
        for &up in stage.upstream() {
            if !self.manifest.stages.contains_key(up.name()) {
                return Err(PipelineError::MissingDependency { stage, missing: up });
            }
            if let Some(diff) = self.staleness(up)? {
                return Err(PipelineError::StaleUpstream { stage, upstream: up, diff });
            }
        }
        if self.is_complete(stage)? {
            return Ok(StageOutcome::UpToDate);
        }
        let inputs = self.current_inputs(stage)?;
        let artifacts = stages::run(&self.config, stage)?;
        let mut hashed = BTreeMap::new();
        for rel in artifacts {
            let hash = file_hash(&self.run_dir().join(&rel))
                .ok_or_else(|| PipelineError::Artifact(format!("stage {stage} did not write {rel}")))?;
            hashed.insert(rel, hash);
        }
        let record = StageRecord {
            config_hash: self.config_hash(stage),
            inputs,
            artifacts: hashed,
            completed_at: manifest::now(),
        };
        self.manifest.stages.insert(stage.name().to_string(), record);
        self.manifest.save(&self.run_dir)?;
        Ok(StageOutcome::Ran)
    }
}

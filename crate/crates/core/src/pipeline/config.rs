//! Run configuration.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::corpus::{BuildConfig, LengthLimits};
use crate::judge::{HttpConfig, JudgeOptions, MockRule};
use crate::predictor::Hyperparameters;
use crate::sidecar::ExecutionLimits;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub fuzz: u64,
    pub negatives: u64,
    /// Stratified train/test split of each model's labeled matrix.
    pub split: u64,
    pub predictor: u64,
    pub sage: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds { fuzz: 1, negatives: 2, split: 3, predictor: 4, sage: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendConfig {
    /// Offline rule, e.g. `yes-if-even-output-len`.
    Mock(String),
    Http(HttpConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub id: String,
    pub backend: BackendConfig,
}

/// Which dataset triples are sent to the judge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeSplit {
    All,
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JudgeConfig {
    pub models: Vec<ModelConfig>,
    pub split: JudgeSplit,
    #[serde(flatten)]
    pub options: JudgeOptions,
    /// Defaults to `<run_dir>/cache/judge`.
    pub cache_dir: Option<PathBuf>,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        JudgeConfig { models: Vec::new(), split: JudgeSplit::All, options: JudgeOptions::default(), cache_dir: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SageSettings {
    pub n_permutations: usize,
    pub background_size: usize,
    pub threshold: f64,
    /// Rows in the Markdown importance table.
    pub top_k: usize,
}

impl Default for SageSettings {
    fn default() -> Self {
        SageSettings { n_permutations: 512, background_size: 128, threshold: 0.95, top_k: 15 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShadowConfig {
    /// Externally produced score files (`triple_id,score[,label]`) per judged model.
    pub scores: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageToggles {
    pub corpus: bool,
    pub metrics: bool,
    pub judge: bool,
    pub predictor: bool,
    pub sage: bool,
    pub shadow: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        StageToggles { corpus: true, metrics: true, judge: true, predictor: true, sage: true, shadow: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub corpus_root: PathBuf,
    pub run_dir: PathBuf,
    pub python: String,
    pub workers: usize,
    pub fuzz_budget: usize,
    pub seeds: Seeds,
    pub limits: LengthLimits,
    pub execution: ExecutionLimits,
    pub judge: JudgeConfig,
    /// `seed` here is ignored; `seeds.predictor` is used instead.
    pub predictor: Hyperparameters,
    pub sage: SageSettings,
    pub shadow: ShadowConfig,
    pub stages: StageToggles,
    /// Directory that relative paths are resolved against; the config
    /// file's directory when loaded from disk.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus_root: PathBuf::from("corpus"),
            run_dir: PathBuf::from("run"),
            python: "python3".into(),
            workers: 4,
            fuzz_budget: 8,
            seeds: Seeds::default(),
            limits: LengthLimits::default(),
            execution: ExecutionLimits::default(),
            judge: JudgeConfig::default(),
            predictor: Hyperparameters::default(),
            sage: SageSettings::default(),
            shadow: ShadowConfig::default(),
            stages: StageToggles::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

fn invalid(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

impl RunConfig {
    /// Parses and validates a JSON config. Paths are kept as written and
    /// resolved against the config file's directory when used.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let mut config: RunConfig = serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        config.base_dir = std::path::absolute(parent).map_err(|e| invalid(format!("{}: {e}", parent.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_relative() {
            self.base_dir.join(p)
        } else {
            p.to_path_buf()
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.resolve(&self.run_dir)
    }

    pub fn corpus_root(&self) -> PathBuf {
        self.resolve(&self.corpus_root)
    }

    /// Negated comparisons are deliberate: NaN must fail validation.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), PipelineError> {
        let l = &self.limits;
        if l.max_code_chars == 0 || l.max_input_chars == 0 || l.max_output_chars == 0 {
            return Err(invalid("length limits must be positive"));
        }
        if self.fuzz_budget == 0 {
            return Err(invalid("fuzz_budget must be positive"));
        }
        if self.workers == 0 || self.judge.options.concurrency == 0 {
            return Err(invalid("workers and judge concurrency must be positive"));
        }
        if !(self.execution.timeout_secs > 0.0) || self.execution.memory_cap_bytes == 0 {
            return Err(invalid("execution timeout and memory cap must be positive"));
        }
        let mut ids = BTreeSet::new();
        for m in &self.judge.models {
            let safe = !m.id.is_empty()
                && m.id != "."
                && m.id != ".."
                && m.id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
            if !safe {
                return Err(invalid(format!("model id {:?} must be non-empty and use only [A-Za-z0-9._-]", m.id)));
            }
            if !ids.insert(&m.id) {
                return Err(invalid(format!("duplicate model id {:?}", m.id)));
            }
            if let BackendConfig::Mock(rule) = &m.backend {
                rule.parse::<MockRule>().map_err(|e| invalid(e.to_string()))?;
            }
        }
        if self.stages.judge && self.judge.models.is_empty() {
            return Err(invalid("the judge stage needs at least one model"));
        }
        let hp = &self.predictor;
        if !(hp.subsample > 0.0 && hp.subsample <= 1.0) || !(hp.learning_rate > 0.0) || hp.n_trees == 0 {
            return Err(invalid("predictor needs n_trees > 0, learning_rate > 0 and subsample in (0, 1]"));
        }
        let s = &self.sage;
        if s.n_permutations < 2 || s.background_size == 0 {
            return Err(invalid("sage needs n_permutations >= 2 and background_size >= 1"));
        }
        if !(s.threshold > 0.0 && s.threshold <= 1.0) {
            return Err(invalid("sage threshold must lie in (0, 1]"));
        }
        for model in self.shadow.scores.keys() {
            if !ids.contains(model) {
                return Err(invalid(format!("shadow scores given for unknown model {model:?}")));
            }
        }
        Ok(())
    }

    pub fn build_config(&self) -> BuildConfig {
        BuildConfig {
            fuzz_budget: self.fuzz_budget,
            seed_fuzz: self.seeds.fuzz,
            seed_negatives: self.seeds.negatives,
            limits: self.limits,
            execution: self.execution,
            workers: self.workers,
        }
    }

    pub fn hyperparameters(&self) -> Hyperparameters {
        Hyperparameters { seed: self.seeds.predictor, ..self.predictor.clone() }
    }

    pub fn judge_cache_dir(&self) -> PathBuf {
        match &self.judge.cache_dir {
            Some(dir) => self.resolve(dir),
            None => self.run_dir().join("cache").join("judge"),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_model() -> RunConfig {
        let mut c = RunConfig::default();
        c.judge.models.push(ModelConfig { id: "mock".into(), backend: BackendConfig::Mock("always-yes".into()) });
        c
    }

    #[test]
    fn defaults_validate_once_a_model_exists() {
        assert!(RunConfig::default().validate().is_err());
        with_model().validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = with_model();
        c.limits.max_input_chars = 0;
        assert!(c.validate().is_err());
        let mut c = with_model();
        c.judge.models[0].id = "../x".into();
        assert!(c.validate().is_err());
        let mut c = with_model();
        c.judge.models[0].backend = BackendConfig::Mock("maybe".into());
        assert!(c.validate().is_err());
        let mut c = with_model();
        c.sage.threshold = 1.5;
        assert!(c.validate().is_err());
        let mut c = with_model();
        c.shadow.scores.insert("other".into(), "s.csv".into());
        assert!(c.validate().is_err());
    }

    #[test]
    fn json_round_trip_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        let c = with_model();
        std::fs::write(&path, c.to_json()).unwrap();
        let loaded = RunConfig::load(&path).unwrap();
        assert_eq!(loaded.corpus_root, PathBuf::from("corpus"));
        assert_eq!(loaded.corpus_root(), dir.path().join("corpus"));
        assert_eq!(loaded.to_json(), c.to_json());
        assert_eq!(loaded.judge.models, c.judge.models);
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"judge": {"models": [{"id": "m", "backend": {"mock": "truth"}}], "concurrency": 2}}"#).unwrap();
        assert_eq!(c.judge.options.concurrency, 2);
        assert_eq!(c.limits, LengthLimits::default());
        assert_eq!(c.sage.n_permutations, 512);
        c.validate().unwrap();
    }
}

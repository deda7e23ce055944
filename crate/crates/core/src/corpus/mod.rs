//! Labeled triple dataset: loading programs, fuzzing inputs, executing,
//! deduplicating, generating in-program shuffled negatives, splitting by
//! problem and filtering by length.

mod build;
mod fuzz;

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing::sha256_parts;
use crate::sidecar::SidecarError;

pub use build::{
    apply_length_filters, build_dataset, deduplicate, execute_and_collect, make_negatives,
    split_by_problem, BuildConfig, BuildReport, BuiltDataset, ExecutionOutcome, LengthLimits,
    NegativeOutcome,
};
pub use fuzz::{fuzz_inputs, Fuzzer, Generator, SPECIAL_INTEGERS};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed dataset record at {path}:{line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("corpus at {0} contains no programs")]
    EmptyCorpus(PathBuf),
    #[error("cannot split an empty problem set")]
    NoProblems,
    #[error(transparent)]
    Sidecar(#[from] SidecarError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    pub problem_id: String,
    pub submission_id: String,
    pub source: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    ExecutedPositive,
    ShuffledNegative,
}

/// One `(program, input, candidate output)` sample with its ground-truth
/// consistency label. Field order is the on-disk record layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub problem_id: String,
    pub submission_id: String,
    pub code: String,
    pub input: String,
    pub output: String,
    pub label: u8,
    pub origin: Origin,
}

impl Triple {
    pub fn positive(program: &Program, input: &str, output: &str) -> Self {
        Triple {
            problem_id: program.problem_id.clone(),
            submission_id: program.submission_id.clone(),
            code: program.source.clone(),
            input: input.to_string(),
            output: output.to_string(),
            label: 1,
            origin: Origin::ExecutedPositive,
        }
    }

    /// Stable content-derived identifier.
    pub fn id(&self) -> String {
        let label = self.label.to_string();
        let digest = sha256_parts(&[
            self.problem_id.as_str(),
            self.submission_id.as_str(),
            self.input.as_str(),
            self.output.as_str(),
            label.as_str(),
        ]);
        digest[..16].to_string()
    }

    pub fn program_key(&self) -> (&str, &str) {
        (&self.problem_id, &self.submission_id)
    }

    fn sort_key(&self) -> (&str, &str, &str, std::cmp::Reverse<u8>) {
        (
            &self.problem_id,
            &self.submission_id,
            &self.input,
            std::cmp::Reverse(self.label),
        )
    }
}

/// Sort into the canonical dataset order:
/// `(problem_id, submission_id, input, label desc)`.
pub fn sort_canonical(triples: &mut [Triple]) {
    triples.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}

/// Problem-level train/eval assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub ordering: Vec<String>,
    pub eval_problems: BTreeSet<String>,
    pub train_problems: BTreeSet<String>,
}

impl SplitManifest {
    pub fn is_eval(&self, problem_id: &str) -> bool {
        self.eval_problems.contains(problem_id)
    }

    pub fn is_train(&self, problem_id: &str) -> bool {
        self.train_problems.contains(problem_id)
    }
}

/// Load `<root>/<problem_id>/<submission_id>.py`, sorted by
/// `(problem_id, submission_id)`. Empty and non-UTF-8 files are skipped.
pub fn load_corpus(root: &Path) -> Result<Vec<Program>, CorpusError> {
    let mut programs = Vec::new();
    let mut problem_dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(io_err(root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    problem_dirs.sort();
    for dir in problem_dirs {
        let problem_id = match dir.file_name().and_then(|n| n.to_str()) {
            Some(name) => name.to_string(),
            None => continue,
        };
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.extension().is_some_and(|ext| ext == "py"))
            .collect();
        files.sort();
        for file in files {
            let Some(submission_id) = file.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let bytes = fs::read(&file).map_err(io_err(&file))?;
            match String::from_utf8(bytes) {
                Ok(source) if !source.trim().is_empty() => programs.push(Program {
                    problem_id: problem_id.clone(),
                    submission_id: submission_id.to_string(),
                    source,
                }),
                Ok(_) => tracing::warn!(file = %file.display(), "skipping empty program"),
                Err(_) => tracing::warn!(file = %file.display(), "skipping non-UTF-8 program"),
            }
        }
    }
    if programs.is_empty() {
        return Err(CorpusError::EmptyCorpus(root.to_path_buf()));
    }
    Ok(programs)
}

/// Problem ids present under the corpus root, sorted.
pub fn corpus_problems(programs: &[Program]) -> BTreeSet<String> {
    programs.iter().map(|p| p.problem_id.clone()).collect()
}

/// JSON-lines encoding in canonical order.
pub fn dataset_jsonl(triples: &[Triple]) -> Vec<u8> {
    let mut sorted = triples.to_vec();
    sort_canonical(&mut sorted);
    let mut buf = Vec::new();
    for t in &sorted {
        serde_json::to_writer(&mut buf, t).expect("triple serialization");
        buf.push(b'\n');
    }
    buf
}

pub fn write_dataset(path: &Path, triples: &[Triple]) -> Result<(), CorpusError> {
    crate::atomic::write_atomic(path, &dataset_jsonl(triples)).map_err(io_err(path))
}

pub fn read_dataset(path: &Path) -> Result<Vec<Triple>, CorpusError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Triple = serde_json::from_str(&line).map_err(|e| CorpusError::Record {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triple(problem: &str, sub: &str, input: &str, output: &str, label: u8) -> Triple {
        Triple {
            problem_id: problem.into(),
            submission_id: sub.into(),
            code: "print(input())".into(),
            input: input.into(),
            output: output.into(),
            label,
            origin: if label == 1 {
                Origin::ExecutedPositive
            } else {
                Origin::ShuffledNegative
            },
        }
    }

    #[test]
    fn canonical_order_puts_positive_first() {
        let mut ts = vec![
            triple("p2", "s1", "1", "1", 1),
            triple("p1", "s1", "2", "3", 0),
            triple("p1", "s1", "2", "2", 1),
            triple("p1", "s0", "9", "9", 1),
        ];
        sort_canonical(&mut ts);
        let keys: Vec<_> = ts
            .iter()
            .map(|t| (t.problem_id.as_str(), t.submission_id.as_str(), t.input.as_str(), t.label))
            .collect();
        assert_eq!(
            keys,
            [("p1", "s0", "9", 1), ("p1", "s1", "2", 1), ("p1", "s1", "2", 0), ("p2", "s1", "1", 1)]
        );
    }

    #[test]
    fn ids_distinguish_labels() {
        let a = triple("p", "s", "1", "1", 1);
        let b = triple("p", "s", "1", "1", 0);
        assert_ne!(a.id(), b.id());
        assert_eq!(a.id(), a.clone().id());
        assert_eq!(a.id().len(), 16);
    }

    #[test]
    fn dataset_record_layout() {
        let t = triple("p1", "s1", "5", "5", 1);
        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(
            json,
            r#"{"problem_id":"p1","submission_id":"s1","code":"print(input())","input":"5","output":"5","label":1,"origin":"executed_positive"}"#
        );
    }

    #[test]
    fn dataset_roundtrip_is_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let ts = vec![triple("p2", "s1", "1", "1", 1), triple("p1", "s1", "2", "2", 1)];
        write_dataset(&path, &ts).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back[0].problem_id, "p1");
        assert_eq!(back.len(), 2);
    }

    #[test]
    fn loads_layout_and_skips_empty() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        fs::create_dir_all(root.join("p01")).unwrap();
        fs::create_dir_all(root.join("p00")).unwrap();
        fs::write(root.join("p01/b.py"), "print(1)\n").unwrap();
        fs::write(root.join("p01/a.py"), "print(2)\n").unwrap();
        fs::write(root.join("p00/z.py"), "   \n").unwrap();
        fs::write(root.join("p00/notes.txt"), "ignored").unwrap();
        let programs = load_corpus(root).unwrap();
        let ids: Vec<_> = programs
            .iter()
            .map(|p| format!("{}/{}", p.problem_id, p.submission_id))
            .collect();
        assert_eq!(ids, ["p01/a", "p01/b"]);
    }
}

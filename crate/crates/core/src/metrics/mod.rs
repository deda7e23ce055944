//! Static feature extraction.
//!
//! Four families are computed without running the program: size/lexical,
//! bytecode opcode statistics, AST graph structure and control flow. Vocabulary
//! dependent features (per-opcode frequencies, per-node-type counts) are laid
//! out by a [`FeatureCatalog`] frozen from the training split.

mod control_flow;
mod graph;
mod lexical;
mod opcode;
pub mod syntax;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Triple;
use crate::hashing::sha256_parts;
use crate::sidecar::{Disassembler, OpcodeSequence};

pub use control_flow::{control_flow_stats, extract_control_flow, ControlFlowStats, CONTROL_FLOW_FEATURES};
pub use graph::{bfs_distances, density, extract_ast_graph, path_statistics, AST_SUMMARY_FEATURES, NODE_COUNT_PREFIX};
pub use lexical::{extract_lexical, LEXICAL_FEATURES};
pub use opcode::{extract_opcode_features, shannon_entropy_bits, OPCODE_FREQ_PREFIX, OPCODE_SUMMARY_FEATURES};

pub type FeatureMap = BTreeMap<String, f64>;

pub const PARSE_FAILED: &str = "parse_failed";
pub const OTHER: &str = "OTHER";

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("cannot build a feature catalog from an empty training split")]
    EmptyTraining,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MetricsError + '_ {
    move |source| MetricsError::Io { path: path.to_path_buf(), source }
}

/// Ordered feature names plus the frozen vocabularies they were laid out from.
/// Both vocabularies are sorted and end with the `OTHER` sentinel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureCatalog {
    pub names: Vec<String>,
    pub opcode_vocabulary: Vec<String>,
    pub node_type_vocabulary: Vec<String>,
}

/// Identity of an ordered feature-name list, shared by catalogs and by
/// column subsets of a feature matrix.
pub fn catalog_id_for<S: AsRef<str>>(names: &[S]) -> String {
    let parts: Vec<&str> = names.iter().map(AsRef::as_ref).collect();
    sha256_parts(&parts)[..16].to_string()
}

fn frozen_vocabulary(names: Vec<String>) -> Vec<String> {
    let mut vocab: Vec<String> = names
        .into_iter()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter(|n| n != OTHER)
        .collect();
    vocab.push(OTHER.to_string());
    vocab
}

impl FeatureCatalog {
    pub fn new(opcodes: Vec<String>, node_types: Vec<String>) -> Self {
        let opcode_vocabulary = frozen_vocabulary(opcodes);
        let node_type_vocabulary = frozen_vocabulary(node_types);
        let mut names: Vec<String> = LEXICAL_FEATURES.iter().map(|s| s.to_string()).collect();
        names.push(PARSE_FAILED.to_string());
        names.extend(OPCODE_SUMMARY_FEATURES.iter().map(|s| s.to_string()));
        names.extend(opcode_vocabulary.iter().map(|n| format!("{OPCODE_FREQ_PREFIX}{n}")));
        names.extend(AST_SUMMARY_FEATURES.iter().map(|s| s.to_string()));
        names.extend(node_type_vocabulary.iter().map(|n| format!("{NODE_COUNT_PREFIX}{n}")));
        names.extend(CONTROL_FLOW_FEATURES.iter().map(|s| s.to_string()));
        FeatureCatalog { names, opcode_vocabulary, node_type_vocabulary }
    }

    /// Content hash identifying this catalog.
    pub fn id(&self) -> String {
        catalog_id_for(&self.names)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    fn known(vocab: &[String], name: &str) -> bool {
        let real = &vocab[..vocab.len().saturating_sub(1)];
        real.binary_search_by(|v| v.as_str().cmp(name)).is_ok()
    }

    pub fn knows_opcode(&self, name: &str) -> bool {
        Self::known(&self.opcode_vocabulary, name)
    }

    pub fn knows_node_type(&self, name: &str) -> bool {
        Self::known(&self.node_type_vocabulary, name)
    }

    /// Lays a feature map out in catalog order; absent names become 0.
    pub fn vectorize(&self, map: &FeatureMap) -> FeatureVector {
        let values = self
            .names
            .iter()
            .map(|n| {
                let v = map.get(n).copied().unwrap_or(0.0);
                if v.is_finite() {
                    v
                } else {
                    0.0
                }
            })
            .collect();
        FeatureVector { catalog_id: self.id(), values }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("catalog serializes") + "\n"
    }

    pub fn write(&self, path: &Path) -> Result<(), MetricsError> {
        crate::atomic::write_atomic(path, self.to_json().as_bytes()).map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self, MetricsError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| MetricsError::Format { path: path.to_path_buf(), message: e.to_string() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub catalog_id: String,
    pub values: Vec<f64>,
}

/// Freezes the vocabularies from training data: node types from parsing each
/// distinct training program, opcodes from the supplied sequences.
pub fn build_catalog(training: &[Triple], opcode_seqs: &[OpcodeSequence]) -> Result<FeatureCatalog, MetricsError> {
    if training.is_empty() {
        return Err(MetricsError::EmptyTraining);
    }
    let codes: BTreeSet<&str> = training.iter().map(|t| t.code.as_str()).collect();
    let mut node_types = BTreeSet::new();
    for code in codes {
        if let Ok(suite) = syntax::parse(code) {
            node_types.extend(syntax::syntax_tree(&suite).kinds.into_iter().map(str::to_string));
        }
    }
    let opcodes: BTreeSet<String> = opcode_seqs.iter().flat_map(|s| s.names().map(str::to_string)).collect();
    Ok(FeatureCatalog::new(opcodes.into_iter().collect(), node_types.into_iter().collect()))
}

fn merge_family(into: &mut FeatureMap, family: FeatureMap) {
    for (name, v) in family {
        if name == PARSE_FAILED {
            let prev = into.get(PARSE_FAILED).copied().unwrap_or(0.0);
            into.insert(name, prev.max(v));
        } else {
            into.insert(name, v);
        }
    }
}

/// Every feature for one triple given its (possibly empty) opcode sequence.
pub fn triple_features(code: &str, input: &str, output: &str, ops: &OpcodeSequence, catalog: &FeatureCatalog) -> FeatureMap {
    let parsed = syntax::parse(code);
    let mut map = FeatureMap::new();
    merge_family(&mut map, lexical::lexical_features(code, input, output, parsed.is_err()));
    merge_family(&mut map, extract_opcode_features(ops, catalog));
    match &parsed {
        Ok(suite) => {
            merge_family(&mut map, graph::tree_features(&syntax::syntax_tree(suite), catalog));
            merge_family(&mut map, control_flow::control_flow_features(suite));
        }
        Err(_) => {
            merge_family(&mut map, graph::failed_ast_features(catalog));
            merge_family(&mut map, control_flow::failed_control_flow_features());
        }
    }
    map
}

/// Opcodes for `code`; any sidecar failure yields the empty sequence, which
/// the opcode family reports as a parse failure.
pub fn disassemble_or_empty(code: &str, sidecar: &mut dyn Disassembler) -> OpcodeSequence {
    match sidecar.disassemble(code) {
        Ok(seq) => seq,
        Err(e) => {
            tracing::debug!(error = %e, "disassembly failed");
            OpcodeSequence::default()
        }
    }
}

/// Full feature vector for one triple. Uses only the sidecar's disassembler.
pub fn extract_all(triple: &Triple, sidecar: &mut dyn Disassembler, catalog: &FeatureCatalog) -> FeatureVector {
    let ops = disassemble_or_empty(&triple.code, sidecar);
    catalog.vectorize(&triple_features(&triple.code, &triple.input, &triple.output, &ops, catalog))
}

/// Disassembles each distinct program once.
pub fn disassemble_programs<'a, I>(codes: I, sidecar: &mut dyn Disassembler) -> HashMap<String, OpcodeSequence>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut out = HashMap::new();
    for code in codes {
        if !out.contains_key(code) {
            out.insert(code.to_string(), disassemble_or_empty(code, sidecar));
        }
    }
    out
}

/// Feature vectors for a batch, in input order, with code-level work shared.
pub fn extract_batch(
    triples: &[Triple],
    opcodes: &HashMap<String, OpcodeSequence>,
    catalog: &FeatureCatalog,
) -> Vec<FeatureVector> {
    let empty = OpcodeSequence::default();
    triples
        .par_iter()
        .map(|t| {
            let ops = opcodes.get(&t.code).unwrap_or(&empty);
            catalog.vectorize(&triple_features(&t.code, &t.input, &t.output, ops, catalog))
        })
        .collect()
}

/// Feature matrix as stored on disk: catalog names plus rows keyed by id.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

pub const ID_COLUMN: &str = "triple_id";

pub fn feature_matrix_csv(catalog: &FeatureCatalog, rows: &[(String, FeatureVector)]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![ID_COLUMN.to_string()];
    header.extend(catalog.names.iter().cloned());
    w.write_record(&header).expect("in-memory csv");
    for (id, vector) in rows {
        let mut record = vec![id.clone()];
        record.extend(vector.values.iter().map(|v| v.to_string()));
        w.write_record(&record).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

pub fn write_feature_matrix(path: &Path, catalog: &FeatureCatalog, rows: &[(String, FeatureVector)]) -> Result<(), MetricsError> {
    crate::atomic::write_atomic(path, &feature_matrix_csv(catalog, rows)).map_err(io_err(path))
}

pub fn read_feature_matrix(path: &Path) -> Result<FeatureMatrix, MetricsError> {
    let fmt = |message: String| MetricsError::Format { path: path.to_path_buf(), message };
    let mut r = csv::Reader::from_path(path).map_err(|e| fmt(e.to_string()))?;
    let header = r.headers().map_err(|e| fmt(e.to_string()))?.clone();
    if header.get(0) != Some(ID_COLUMN) {
        return Err(fmt(format!("first column must be {ID_COLUMN}")));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| fmt(e.to_string()))?;
        let id = record.get(0).unwrap_or_default().to_string();
        let values = record
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>().map_err(|e| fmt(format!("row {id}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        if values.len() != names.len() {
            return Err(fmt(format!("row {id}: expected {} values, found {}", names.len(), values.len())));
        }
        rows.push((id, values));
    }
    Ok(FeatureMatrix { names, rows })
}

//! Bytecode opcode statistics.

use std::collections::BTreeMap;

use super::{FeatureCatalog, FeatureMap, OTHER, PARSE_FAILED};
use crate::sidecar::OpcodeSequence;

pub const OPCODE_SUMMARY_FEATURES: [&str; 3] = ["num_opcodes", "num_unique_opcodes", "opcode_entropy"];
pub const OPCODE_FREQ_PREFIX: &str = "op_freq_";

/// Shannon entropy in bits of the empirical distribution given by `counts`.
pub fn shannon_entropy_bits<I: IntoIterator<Item = usize>>(counts: I) -> f64 {
    let counts: Vec<usize> = counts.into_iter().filter(|&c| c > 0).collect();
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    let h: f64 = counts
        .iter()
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum();
    // -0.0 for the degenerate distribution
    h.max(0.0)
}

/// Counts, entropy and per-opcode relative frequencies. Opcode names outside
/// the catalog vocabulary accumulate into `op_freq_OTHER`. An empty sequence
/// yields zeros with `parse_failed` set.
pub fn extract_opcode_features(seq: &OpcodeSequence, catalog: &FeatureCatalog) -> FeatureMap {
    let mut map = FeatureMap::new();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for name in seq.names() {
        *counts.entry(name).or_default() += 1;
    }
    let total = seq.ops.len();
    for name in &catalog.opcode_vocabulary {
        map.insert(format!("{OPCODE_FREQ_PREFIX}{name}"), 0.0);
    }
    if total == 0 {
        for name in OPCODE_SUMMARY_FEATURES {
            map.insert(name.to_string(), 0.0);
        }
        map.insert(PARSE_FAILED.to_string(), 1.0);
        return map;
    }

    map.insert("num_opcodes".into(), total as f64);
    map.insert("num_unique_opcodes".into(), counts.len() as f64);
    map.insert("opcode_entropy".into(), shannon_entropy_bits(counts.values().copied()));

    let mut other = 0usize;
    for (name, count) in &counts {
        if catalog.knows_opcode(name) {
            map.insert(format!("{OPCODE_FREQ_PREFIX}{name}"), *count as f64 / total as f64);
        } else {
            other += count;
        }
    }
    map.insert(format!("{OPCODE_FREQ_PREFIX}{OTHER}"), other as f64 / total as f64);
    map
}

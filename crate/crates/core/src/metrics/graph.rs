//! AST graph-structure features.

use std::collections::{BTreeMap, VecDeque};

use super::syntax::SyntaxTree;
use super::{FeatureCatalog, FeatureMap, OTHER, PARSE_FAILED};

pub const AST_SUMMARY_FEATURES: [&str; 7] = [
    "ast_num_nodes",
    "ast_num_edges",
    "ast_max_depth",
    "ast_avg_branching",
    "ast_density",
    "ast_diameter",
    "ast_avg_shortest_path",
];
pub const NODE_COUNT_PREFIX: &str = "nodecount_";

/// Hop distances from `source`; `None` for unreachable nodes.
pub fn bfs_distances(adj: &[Vec<usize>], source: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adj.len()];
    let mut queue = VecDeque::new();
    dist[source] = Some(0);
    queue.push_back(source);
    while let Some(u) = queue.pop_front() {
        let d = dist[u].expect("queued nodes have a distance");
        for &v in &adj[u] {
            if dist[v].is_none() {
                dist[v] = Some(d + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Exact diameter and mean shortest-path length over ordered pairs of
/// distinct mutually reachable nodes, by BFS from every node.
pub fn path_statistics(adj: &[Vec<usize>]) -> (usize, f64) {
    let n = adj.len();
    let mut diameter = 0;
    let mut total = 0u64;
    let mut pairs = 0u64;
    for s in 0..n {
        for (t, d) in bfs_distances(adj, s).into_iter().enumerate() {
            if t == s {
                continue;
            }
            if let Some(d) = d {
                diameter = diameter.max(d);
                total += d as u64;
                pairs += 1;
            }
        }
    }
    let avg = if pairs > 0 { total as f64 / pairs as f64 } else { 0.0 };
    (diameter, avg)
}

/// `2E / (V (V - 1))`, defined as 0 below two nodes.
pub fn density(nodes: usize, edges: usize) -> f64 {
    if nodes < 2 {
        0.0
    } else {
        2.0 * edges as f64 / (nodes as f64 * (nodes as f64 - 1.0))
    }
}

pub(crate) fn tree_features(tree: &SyntaxTree, catalog: &FeatureCatalog) -> FeatureMap {
    let mut map = FeatureMap::new();
    for kind in &catalog.node_type_vocabulary {
        map.insert(format!("{NODE_COUNT_PREFIX}{kind}"), 0.0);
    }

    let nodes = tree.len();
    let edges = tree.parents.iter().filter(|p| p.is_some()).count();
    let max_depth = tree.depths().into_iter().max().unwrap_or(0);
    let children = tree.child_counts();
    let internal: Vec<usize> = children.iter().copied().filter(|&c| c > 0).collect();
    let avg_branching = if internal.is_empty() {
        0.0
    } else {
        internal.iter().sum::<usize>() as f64 / internal.len() as f64
    };
    let (diameter, avg_path) = path_statistics(&tree.adjacency());

    let values = [
        nodes as f64,
        edges as f64,
        max_depth as f64,
        avg_branching,
        density(nodes, edges),
        diameter as f64,
        avg_path,
    ];
    for (name, v) in AST_SUMMARY_FEATURES.iter().zip(values) {
        map.insert(name.to_string(), v);
    }

    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for kind in &tree.kinds {
        *counts.entry(kind).or_default() += 1;
    }
    let mut other = 0;
    for (kind, count) in counts {
        if catalog.knows_node_type(kind) {
            map.insert(format!("{NODE_COUNT_PREFIX}{kind}"), count as f64);
        } else {
            other += count;
        }
    }
    map.insert(format!("{NODE_COUNT_PREFIX}{OTHER}"), other as f64);
    map
}

/// Graph family for a program. Parse failure yields zeros with
/// `parse_failed` set.
pub fn extract_ast_graph(code: &str, catalog: &FeatureCatalog) -> FeatureMap {
    match super::syntax::parse(code) {
        Ok(suite) => {
            let mut map = tree_features(&super::syntax::syntax_tree(&suite), catalog);
            map.insert(PARSE_FAILED.to_string(), 0.0);
            map
        }
        Err(_) => failed_ast_features(catalog),
    }
}

pub(crate) fn failed_ast_features(catalog: &FeatureCatalog) -> FeatureMap {
    let mut map = tree_features(&SyntaxTree::default(), catalog);
    map.insert(PARSE_FAILED.to_string(), 1.0);
    map
}

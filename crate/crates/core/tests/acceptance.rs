//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Needs `python3` on PATH.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode, Stdio};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use iodiag::corpus::{
    apply_length_filters, build_dataset, load_corpus, split_by_problem, BuildConfig, LengthLimits, Origin, Triple,
};
use iodiag::judge::f1_score;
use iodiag::metrics::syntax::parse;
use iodiag::metrics::{control_flow_stats, extract_ast_graph, extract_opcode_features, path_statistics, FeatureCatalog};
use iodiag::pipeline::{BackendConfig, ModelConfig, Pipeline, RunConfig, MANIFEST_FILE};
use iodiag::predictor::{auroc, train, Hyperparameters, LabeledMatrix, LabeledRow, TreeEnsembleModel};
use iodiag::sage::{compare_full_vs_pruned, estimate_sage, prune_by_positive_mass, SageOptions, SageReport, SageValue};
use iodiag::sidecar::{Disassembler, Executor, OpcodeSequence, Sidecar, SidecarOptions};

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

const F1_TOLERANCE: f64 = 1e-3;
const AUROC_TOLERANCE: f64 = 1e-9;
const SAGE_SE_MULTIPLE: f64 = 3.0;
const PRUNE_THRESHOLD: f64 = 0.95;
const ENTROPY_TOLERANCE: f64 = 1e-12;
const RECOVERY_MIN_AUROC: f64 = 0.95;
const RECOVERY_MAX_DROP: f64 = 0.02;

fn fixture_corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/corpus")
}

fn sidecar_options() -> SidecarOptions {
    SidecarOptions { python: "python3".into(), disable_run: false }
}

// ---------------------------------------------------------------- F1

fn judge_f1_arithmetic() -> Outcome {
    // (model, precision, recall, reported F1)
    let reference = [
        ("GPT-OSS 120B", 0.926, 0.995, 0.959),
        ("Mistral Small 24B", 0.556, 0.892, 0.685),
        ("Llama 3.3 70B", 0.514, 0.931, 0.662),
    ];
    let mut worst: f64 = 0.0;
    for (model, p, r, f1) in reference {
        let got = f1_score(p, r);
        let err = (got - f1).abs();
        ensure!(err <= F1_TOLERANCE, "{model}: F1({p}, {r}) = {got:.5}, reported {f1}");
        worst = worst.max(err);
    }
    Ok(format!("3 models, max |error| {worst:.5}"))
}

// ---------------------------------------------------------------- AUROC

fn brute_auroc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] == 0 {
                pairs += 1.0;
                wins += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

fn auroc_matches_pairwise() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    let mut tied = 0;
    for case in 0..200 {
        let n = rng.gen_range(2..=200);
        let grid = rng.gen_range(2..=30);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..grid) as f64 / grid as f64).collect();
        let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..=1)).collect();
        labels[0] = 0;
        labels[1] = 1;
        if scores.iter().map(|s| s.to_bits()).collect::<BTreeSet<_>>().len() < n {
            tied += 1;
        }
        let fast = auroc(&scores, &labels).map_err(|e| e.to_string())?;
        let err = (fast - brute_auroc(&scores, &labels)).abs();
        ensure!(err <= AUROC_TOLERANCE, "case {case} (n={n}): rank AUROC off by {err:e}");
        worst = worst.max(err);
    }
    Ok(format!("200 instances, {tied} with ties, max |error| {worst:e}"))
}

// ---------------------------------------------------------------- SAGE

/// Mean over background rows of the prediction with features in `known`
/// taken from `row`.
fn marginal_prediction(model: &TreeEnsembleModel, row: &[f64], known: &[usize], background: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for b in background {
        let mut hybrid = b.clone();
        for &j in known {
            hybrid[j] = row[j];
        }
        total += model.predict_row(&hybrid);
    }
    total / background.len() as f64
}

fn log_loss(p: f64, label: u8) -> f64 {
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Exact SAGE values by enumerating every ordering of the features.
fn exact_sage(model: &TreeEnsembleModel, eval: &LabeledMatrix, background: &[Vec<f64>]) -> Vec<f64> {
    let orderings = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut values = [0.0; 3];
    for row in &eval.rows {
        for ordering in orderings {
            let mut known = Vec::new();
            let mut prev = log_loss(marginal_prediction(model, &row.values, &known, background), row.success);
            for j in ordering {
                known.push(j);
                let loss = log_loss(marginal_prediction(model, &row.values, &known, background), row.success);
                values[j] += prev - loss;
                prev = loss;
            }
        }
    }
    let denom = (eval.len() * orderings.len()) as f64;
    values.iter().map(|v| v / denom).collect()
}

fn three_feature_rows(n: usize, seed: u64) -> Vec<LabeledRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let signal = 2.0 * x[0] + x[1] * x[2];
            let success = u8::from(signal + rng.gen_range(-0.5..0.5) > 0.0);
            LabeledRow { id: format!("r{i:04}"), values: x, success }
        })
        .collect()
}

fn sage_matches_exact_enumeration() -> Outcome {
    let names = vec!["a".to_string(), "b".to_string(), "c".to_string()];
    let train_m = LabeledMatrix::new(names.clone(), three_feature_rows(400, 1)).map_err(|e| e.to_string())?;
    // 50 evaluation rows so 2000 samples visit each row exactly 40 times
    let eval = LabeledMatrix::new(names, three_feature_rows(50, 2)).map_err(|e| e.to_string())?;
    let hp = Hyperparameters { n_trees: 40, max_depth: 3, min_samples_leaf: 10, ..Hyperparameters::default() };
    let model = train(&train_m, &hp).map_err(|e| e.to_string())?;
    let background: Vec<Vec<f64>> = train_m.rows.iter().take(24).map(|r| r.values.clone()).collect();
    let opts = SageOptions { n_permutations: 2000, background_size: background.len(), seed: 5 };
    let report = estimate_sage(&model, &eval, &background, &opts).map_err(|e| e.to_string())?;
    let exact = exact_sage(&model, &eval, &background);

    let mut detail = Vec::new();
    for (f, want) in report.features.iter().zip(&exact) {
        let z = (f.value - want).abs() / f.std_error;
        ensure!(
            (f.value - want).abs() <= SAGE_SE_MULTIPLE * f.std_error,
            "{}: estimate {:.5} vs exact {:.5} (se {:.5})",
            f.name,
            f.value,
            want,
            f.std_error
        );
        detail.push(format!("{} {z:.2} se", f.name));
    }
    let gap = report.base_loss - report.full_loss;
    ensure!(
        (report.total() - gap).abs() <= SAGE_SE_MULTIPLE * report.total_std_error,
        "sum {:.6} vs base - full {:.6} (se {:.6})",
        report.total(),
        gap,
        report.total_std_error
    );
    let exact_sum: f64 = exact.iter().sum();
    ensure!(
        (exact_sum - gap).abs() <= SAGE_SE_MULTIPLE * report.total_std_error,
        "exact sum {exact_sum:.6} vs base - full {gap:.6}"
    );
    Ok(format!("deviations {}; efficiency gap {:.2e}", detail.join(", "), (report.total() - gap).abs()))
}

// ---------------------------------------------------------------- pruning

fn pruning_is_minimal() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut nonpositive = 0;
    for case in 0..500 {
        let d = rng.gen_range(1..=120);
        let values: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.3..1.0f64).powi(3)).collect();
        let report = SageReport {
            features: values
                .iter()
                .enumerate()
                .map(|(i, &v)| SageValue { name: format!("f{i:03}"), value: v, std_error: 0.0 })
                .collect(),
            n_permutations: 2,
            background_size: 1,
            eval_rows: 1,
            seed: 0,
            base_loss: 0.0,
            full_loss: 0.0,
            total_std_error: 0.0,
        };
        let total: f64 = values.iter().filter(|v| **v > 0.0).sum();
        let pruned = match prune_by_positive_mass(&report, PRUNE_THRESHOLD) {
            Ok(p) => p,
            Err(e) => {
                ensure!(total == 0.0, "case {case}: unexpected error {e}");
                nonpositive += 1;
                continue;
            }
        };
        let value: HashMap<&str, f64> = report.features.iter().map(|f| (f.name.as_str(), f.value)).collect();
        let kept: Vec<f64> = pruned.retained.iter().map(|n| value[n.as_str()]).collect();
        let target = PRUNE_THRESHOLD * total;
        let covered: f64 = kept.iter().sum();
        let without_last: f64 = kept[..kept.len() - 1].iter().sum();
        ensure!(covered >= target * (1.0 - 1e-12), "case {case}: covers {covered} of target {target}");
        ensure!(without_last < target, "case {case}: last retained feature is not needed");
        ensure!(kept.iter().all(|v| *v > 0.0), "case {case}: retained a non-positive value");
    }
    Ok(format!("500 vectors, {nonpositive} without positive mass"))
}

// ---------------------------------------------------------------- negatives

fn negatives_are_sound() -> Outcome {
    let programs = load_corpus(&fixture_corpus()).map_err(|e| e.to_string())?;
    ensure!(programs.len() == 20, "fixture corpus has {} programs", programs.len());
    let config = BuildConfig::default();
    let built = build_dataset(&programs, &config, || Sidecar::spawn(&sidecar_options())).map_err(|e| e.to_string())?;

    let mut sidecar = Sidecar::spawn(&sidecar_options()).map_err(|e| e.to_string())?;
    let mut outputs: HashMap<(String, String, String), String> = HashMap::new();
    let mut execute = |t: &Triple, input: &str| -> Result<String, String> {
        let key = (t.problem_id.clone(), t.submission_id.clone(), input.to_string());
        if let Some(out) = outputs.get(&key) {
            return Ok(out.clone());
        }
        let r = sidecar.run(&t.code, input, &config.execution).map_err(|e| e.to_string())?;
        ensure!(r.is_usable(), "{} no longer runs on {input:?}", t.id());
        let out = r.stdout.trim_end().to_string();
        outputs.insert(key, out.clone());
        Ok(out)
    };

    let positives: Vec<&Triple> = built.triples.iter().filter(|t| t.label == 1).collect();
    let negatives: Vec<&Triple> = built.triples.iter().filter(|t| t.label == 0).collect();
    for neg in &negatives {
        ensure!(neg.origin == Origin::ShuffledNegative, "{} has origin {:?}", neg.id(), neg.origin);
        let actual = execute(neg, &neg.input)?;
        ensure!(actual != neg.output, "{}: candidate output equals the real output", neg.id());
        let mut donors = BTreeSet::new();
        for p in positives.iter().filter(|p| p.program_key() == neg.program_key() && p.input != neg.input) {
            donors.insert(execute(p, &p.input)?);
        }
        ensure!(donors.contains(&neg.output), "{}: candidate output is not produced on any other input", neg.id());
    }
    for t in &positives {
        ensure!(execute(t, &t.input)? == t.output, "{}: positive output does not reproduce", t.id());
    }
    let no_donor = built.report.no_donor_positives.len();
    ensure!(
        positives.len() == negatives.len() + no_donor,
        "{} positives, {} negatives, {no_donor} without donor",
        positives.len(),
        negatives.len()
    );
    ensure!(built.report.triples_after_filter == built.triples.len(), "length filters removed fixture triples");
    Ok(format!("{} negatives re-executed, {} positives, {no_donor} without donor", negatives.len(), positives.len()))
}

// ---------------------------------------------------------------- static metrics

struct Golden {
    code: &'static str,
    cyclomatic: usize,
    loops: usize,
    branches: usize,
    nodes: usize,
    diameter: usize,
}

const GOLDEN: [Golden; 10] = [
    Golden { code: "x = 1\n", cyclomatic: 1, loops: 0, branches: 0, nodes: 4, diameter: 2 },
    Golden { code: "y = a + 2\n", cyclomatic: 1, loops: 0, branches: 0, nodes: 7, diameter: 3 },
    Golden { code: "print(input())\n", cyclomatic: 1, loops: 0, branches: 0, nodes: 6, diameter: 4 },
    Golden { code: "if a:\n    x = 1\nelse:\n    x = 2\n", cyclomatic: 2, loops: 0, branches: 1, nodes: 9, diameter: 4 },
    Golden { code: "for i in range(3):\n    print(i)\n", cyclomatic: 2, loops: 1, branches: 0, nodes: 10, diameter: 5 },
    Golden { code: "while n > 0:\n    n -= 1\n", cyclomatic: 2, loops: 1, branches: 0, nodes: 10, diameter: 4 },
    Golden { code: "def f(x):\n    return x * 2\n", cyclomatic: 2, loops: 0, branches: 0, nodes: 9, diameter: 5 },
    Golden { code: "if a and b:\n    pass\n", cyclomatic: 3, loops: 0, branches: 1, nodes: 7, diameter: 3 },
    Golden { code: "x = [v for v in r if v]\n", cyclomatic: 2, loops: 0, branches: 0, nodes: 9, diameter: 4 },
    Golden {
        code: "def g(a, b):\n    for i in a:\n        if i in b:\n            return i\n    return None\n",
        cyclomatic: 4,
        loops: 1,
        branches: 1,
        nodes: 17,
        diameter: 6,
    },
];

/// Node counts from the interpreter's own `ast` module (expression contexts
/// excluded) and opcode entropy from its own `dis` walk, one line per snippet.
const PYTHON_ORACLE: &str = r#"
import ast, collections, dis, json, math, sys, types
for code in json.load(sys.stdin):
    nodes = sum(1 for n in ast.walk(ast.parse(code)) if not isinstance(n, ast.expr_context))
    counts = collections.Counter()
    stack = [compile(code, "<s>", "exec")]
    while stack:
        co = stack.pop()
        counts.update(i.opname for i in dis.get_instructions(co))
        stack.extend(c for c in co.co_consts if isinstance(c, types.CodeType))
    total = sum(counts.values())
    h = -sum(c / total * math.log2(c / total) for c in counts.values())
    print(json.dumps([nodes, h]))
"#;

fn python_oracle(snippets: &[&str]) -> Result<Vec<(usize, f64)>, String> {
    let mut child = Command::new("python3")
        .arg("-c")
        .arg(PYTHON_ORACLE)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .map_err(|e| e.to_string())?;
    child
        .stdin
        .take()
        .unwrap()
        .write_all(serde_json::to_string(snippets).unwrap().as_bytes())
        .map_err(|e| e.to_string())?;
    let out = child.wait_with_output().map_err(|e| e.to_string())?;
    ensure!(out.status.success(), "python oracle failed");
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str::<(usize, f64)>(l).map_err(|e| e.to_string()))
        .collect()
}

fn random_tree(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for child in 1..n {
        let parent = rng.gen_range(0..child);
        adj[parent].push(child);
        adj[child].push(parent);
    }
    adj
}

fn all_pairs_diameter(adj: &[Vec<usize>]) -> usize {
    let n = adj.len();
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for (u, nbrs) in adj.iter().enumerate() {
        d[u][u] = 0;
        for &v in nbrs {
            d[u][v] = 1;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                d[i][j] = d[i][j].min(d[i][k] + d[k][j]);
            }
        }
    }
    d.iter().flatten().copied().filter(|&x| x < inf).max().unwrap_or(0)
}

fn static_metric_oracles() -> Outcome {
    let catalog = FeatureCatalog::new(vec![], vec![]);
    let oracle = python_oracle(&GOLDEN.iter().map(|g| g.code).collect::<Vec<_>>())?;
    let mut sidecar = Sidecar::spawn(&SidecarOptions { python: "python3".into(), disable_run: true }).map_err(|e| e.to_string())?;
    for (g, (py_nodes, py_entropy)) in GOLDEN.iter().zip(oracle) {
        let s = control_flow_stats(&parse(g.code).map_err(|e| e.to_string())?);
        let ast = extract_ast_graph(g.code, &catalog);
        let got = (s.cyclomatic_total, s.num_loops, s.num_branches, ast["ast_num_nodes"], ast["ast_num_edges"], ast["ast_diameter"]);
        let want = (g.cyclomatic, g.loops, g.branches, g.nodes as f64, (g.nodes - 1) as f64, g.diameter as f64);
        ensure!(got == want, "{:?}: got {got:?}, want {want:?}", g.code);
        ensure!(py_nodes == g.nodes, "{:?}: interpreter ast has {py_nodes} nodes", g.code);
        let ops = sidecar.disassemble(g.code).map_err(|e| e.to_string())?;
        let h = extract_opcode_features(&ops, &catalog)["opcode_entropy"];
        ensure!((h - py_entropy).abs() <= ENTROPY_TOLERANCE, "{:?}: opcode entropy {h} vs {py_entropy}", g.code);
    }
    // hand-computed entropies of fixed opcode multisets
    for (names, want) in [
        (vec!["LOAD_CONST", "LOAD_CONST", "STORE_NAME", "RETURN_VALUE"], 1.5),
        (vec!["A", "B", "C", "D"], 2.0),
        (vec!["NOP", "NOP", "NOP"], 0.0),
    ] {
        let h = extract_opcode_features(&OpcodeSequence::from_names(names.clone()), &catalog)["opcode_entropy"];
        ensure!((h - want).abs() <= ENTROPY_TOLERANCE, "{names:?}: entropy {h}, want {want}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for case in 0..50 {
        let n = rng.gen_range(1..=200);
        let adj = random_tree(&mut rng, n);
        let (diameter, _) = path_statistics(&adj);
        let brute = all_pairs_diameter(&adj);
        ensure!(diameter == brute, "tree {case} (n={n}): BFS diameter {diameter}, all pairs {brute}");
    }
    Ok("10 golden snippets, 3 opcode multisets, 50 random trees".into())
}

// ---------------------------------------------------------------- split and filters

fn split_and_length_rules() -> Outcome {
    for n in [9usize, 10, 100] {
        // names whose lexicographic order differs from numeric order
        let ids: Vec<String> = (0..n).rev().map(|i| format!("prob{i}")).collect();
        let split = split_by_problem(ids.iter().cloned()).map_err(|e| e.to_string())?;
        let mut sorted = ids.clone();
        sorted.sort();
        let expected: BTreeSet<String> = sorted.iter().step_by(10).cloned().collect();
        ensure!(split.eval_problems == expected, "{n} problems: eval set {:?}", split.eval_problems);
        ensure!(split.eval_problems.len() == n.div_ceil(10), "{n} problems: {} eval", split.eval_problems.len());
        let all: BTreeSet<String> = ids.iter().cloned().collect();
        ensure!(split.train_problems == &all - &expected, "{n} problems: train set is not the complement");
    }

    let limits = LengthLimits::default();
    let at = |code: usize, input: usize, output: usize| Triple {
        problem_id: "p".into(),
        submission_id: "s".into(),
        // multi-byte characters so that bytes and characters differ
        code: "é".repeat(code),
        input: "ü".repeat(input),
        output: "ß".repeat(output),
        label: 1,
        origin: Origin::ExecutedPositive,
    };
    ensure!(limits.admits(&at(5000, 500, 500)), "boundary triple rejected");
    for (name, t) in [("code", at(5001, 500, 500)), ("input", at(5000, 501, 500)), ("output", at(5000, 500, 501))] {
        ensure!(!limits.admits(&t), "{name} one past the limit admitted");
    }
    let kept = apply_length_filters(&[at(5000, 500, 500), at(5001, 0, 0), at(0, 501, 0), at(0, 0, 501)], &limits);
    ensure!(kept.len() == 1, "filter kept {} triples", kept.len());
    Ok("9/10/100 problems, 5000/500/500 accepted, +1 rejected".into())
}

// ---------------------------------------------------------------- determinism

fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                if rel != MANIFEST_FILE && !rel.ends_with(".lock") {
                    out.insert(rel, std::fs::read(&path).unwrap());
                }
            }
        }
    }
    out
}

fn end_to_end_config(run_dir: &Path) -> RunConfig {
    let mut c = RunConfig { corpus_root: fixture_corpus(), run_dir: run_dir.to_path_buf(), ..RunConfig::default() };
    c.judge.models = vec![
        ModelConfig { id: "even-length".into(), backend: BackendConfig::Mock("yes-if-even-output-len".into()) },
        ModelConfig { id: "short-code".into(), backend: BackendConfig::Mock("truth-below-code-chars:60".into()) },
    ];
    c.predictor.min_samples_leaf = 5;
    c.sage.n_permutations = 128;
    c.sage.background_size = 32;
    c
}

fn end_to_end_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run_dir = dir.path().join("run");
    let mut runs = Vec::new();
    for _ in 0..2 {
        if run_dir.exists() {
            std::fs::remove_dir_all(&run_dir).map_err(|e| e.to_string())?;
        }
        let mut p = Pipeline::open(end_to_end_config(&run_dir)).map_err(|e| e.to_string())?;
        p.run_all().map_err(|e| e.to_string())?;
        drop(p);
        runs.push(snapshot(&run_dir));
    }
    let (a, b) = (&runs[0], &runs[1]);
    ensure!(a.keys().eq(b.keys()), "different file sets");
    for (name, bytes) in a {
        ensure!(&b[name] == bytes, "{name} differs between runs");
    }
    for required in ["corpus/dataset.jsonl", "metrics/features.csv", "sage/short-code/report.json", "report/report.md"] {
        ensure!(a.contains_key(required), "{required} missing");
    }
    Ok(format!("{} artifacts byte-identical", a.len()))
}

// ---------------------------------------------------------------- recovery

fn informative_feature_recovery() -> Outcome {
    let planted = [7usize, 23, 41];
    let names: Vec<String> = (0..50).map(|j| format!("x{j:02}")).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let rows: Vec<LabeledRow> = (0..2000)
        .map(|i| {
            let values: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let signal: f64 = planted.iter().map(|&j| values[j]).sum();
            LabeledRow { id: format!("r{i:05}"), values, success: u8::from(signal > 0.0) }
        })
        .collect();
    let matrix = LabeledMatrix::new(names.clone(), rows).map_err(|e| e.to_string())?;
    let hp = Hyperparameters::default();
    let sage = SageOptions { n_permutations: 256, background_size: 64, seed: 0 };
    let result = compare_full_vs_pruned(&matrix, &hp, &sage, PRUNE_THRESHOLD, 0).map_err(|e| e.to_string())?;
    let c = &result.comparison;
    ensure!(c.full_auroc >= RECOVERY_MIN_AUROC, "full model AUROC {:.4}", c.full_auroc);
    for j in planted {
        ensure!(c.pruned.retained.contains(&names[j]), "planted feature {} dropped", names[j]);
    }
    ensure!(
        c.pruned_auroc >= c.full_auroc - RECOVERY_MAX_DROP,
        "pruned AUROC {:.4} vs full {:.4}",
        c.pruned_auroc,
        c.full_auroc
    );
    Ok(format!(
        "full AUROC {:.4}, pruned AUROC {:.4} on {} of 50 features",
        c.full_auroc, c.pruned_auroc, c.retained_count
    ))
}

// ---------------------------------------------------------------- harness

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("judge F1 arithmetic", Duration::from_secs(1), judge_f1_arithmetic),
        ("AUROC equals pairwise oracle", Duration::from_secs(5), auroc_matches_pairwise),
        ("SAGE matches exact enumeration", Duration::from_secs(60), sage_matches_exact_enumeration),
        ("pruning minimality", Duration::from_secs(1), pruning_is_minimal),
        ("negative-sample soundness", Duration::from_secs(60), negatives_are_sound),
        ("static-metric oracles", Duration::from_secs(10), static_metric_oracles),
        ("split rule and length filters", Duration::from_secs(1), split_and_length_rules),
        ("end-to-end determinism", Duration::from_secs(300), end_to_end_determinism),
        ("informative-feature recovery", Duration::from_secs(300), informative_feature_recovery),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, budget, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(_) if elapsed > budget => Err(format!("took {:.1} s, budget {} s", elapsed.as_secs_f64(), budget.as_secs())),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} ({:.2} s)", elapsed.as_secs_f64()),
            Err(reason) => {
                failed += 1;
                println!("FAIL  {name}: {reason} ({:.2} s)", elapsed.as_secs_f64());
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

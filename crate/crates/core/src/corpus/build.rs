use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fuzz_inputs, sort_canonical, CorpusError, Origin, Program, SplitManifest, Triple};
use crate::hashing::derive_seed;
use crate::sidecar::{ExecutionLimits, Executor, SidecarError};

/// Maximum character counts retained after filtering. Bounds are inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthLimits {
    pub max_code_chars: usize,
    pub max_input_chars: usize,
    pub max_output_chars: usize,
}

impl Default for LengthLimits {
    fn default() -> Self {
        LengthLimits {
            max_code_chars: 5000,
            max_input_chars: 500,
            max_output_chars: 500,
        }
    }
}

impl LengthLimits {
    pub fn admits(&self, t: &Triple) -> bool {
        t.code.chars().count() <= self.max_code_chars
            && t.input.chars().count() <= self.max_input_chars
            && t.output.chars().count() <= self.max_output_chars
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExecutionOutcome {
    pub positives: Vec<Triple>,
    /// Inputs whose two runs disagreed.
    pub nondeterministic: Vec<String>,
    /// Inputs that crashed, timed out, printed nothing or were rejected.
    pub failed: Vec<String>,
}

/// Output text recorded for a usable run: stdout without trailing
/// whitespace.
fn observed_output(stdout: &str) -> String {
    stdout.trim_end().to_string()
}

/// Run `program` twice on every input and keep the inputs whose two runs
/// agree and are usable. Only a transport failure aborts; per-input
/// problems are recorded in the outcome.
pub fn execute_and_collect(
    program: &Program,
    inputs: &[String],
    executor: &mut dyn Executor,
    limits: &ExecutionLimits,
) -> Result<ExecutionOutcome, SidecarError> {
    let mut outcome = ExecutionOutcome::default();
    for input in inputs {
        let stdin = format!("{input}\n");
        let first = match executor.run(&program.source, &stdin, limits) {
            Ok(r) => r,
            Err(e) if e.is_transport() => return Err(e),
            Err(e) => {
                tracing::debug!(error = %e, "run request rejected");
                outcome.failed.push(input.clone());
                continue;
            }
        };
        if !first.is_usable() {
            outcome.failed.push(input.clone());
            continue;
        }
        let second = match executor.run(&program.source, &stdin, limits) {
            Ok(r) => r,
            Err(e) if e.is_transport() => return Err(e),
            Err(_) => {
                outcome.failed.push(input.clone());
                continue;
            }
        };
        if !first.same_behaviour(&second) {
            tracing::debug!(
                problem = %program.problem_id,
                submission = %program.submission_id,
                "dropping nondeterministic input"
            );
            outcome.nondeterministic.push(input.clone());
            continue;
        }
        outcome
            .positives
            .push(Triple::positive(program, input, &observed_output(&first.stdout)));
    }
    Ok(outcome)
}

/// Keep the first triple per `(problem_id, input, output)` in the given order.
pub fn deduplicate(triples: &[Triple]) -> Vec<Triple> {
    let mut seen = HashSet::new();
    triples
        .iter()
        .filter(|t| seen.insert((t.problem_id.clone(), t.input.clone(), t.output.clone())))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NegativeOutcome {
    pub negatives: Vec<Triple>,
    /// Ids of positives for which no output `y' != y` exists in the program.
    pub no_donor: Vec<String>,
}

/// One shuffled negative per positive: the same program and input paired
/// with the program's output on a different input. The donor output is
/// drawn uniformly from the program's distinct outputs that differ from the
/// true one.
pub fn make_negatives(triples: &[Triple], seed: u64) -> NegativeOutcome {
    let mut by_program: BTreeMap<(String, String), Vec<&Triple>> = BTreeMap::new();
    for t in triples.iter().filter(|t| t.label == 1) {
        by_program
            .entry((t.problem_id.clone(), t.submission_id.clone()))
            .or_default()
            .push(t);
    }

    let mut out = NegativeOutcome::default();
    for ((problem, submission), mut group) in by_program {
        group.sort_by(|a, b| a.input.cmp(&b.input));
        let outputs: BTreeSet<&str> = group.iter().map(|t| t.output.as_str()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[&problem, &submission]));
        for positive in group {
            let eligible: Vec<&str> = outputs
                .iter()
                .copied()
                .filter(|y| *y != positive.output)
                .collect();
            if eligible.is_empty() {
                tracing::debug!(problem = %problem, submission = %submission, input = %positive.input,
                    "no eligible donor output; positive left unpaired");
                out.no_donor.push(positive.id());
                continue;
            }
            let donor = eligible[rng.gen_range(0..eligible.len())];
            out.negatives.push(Triple {
                output: donor.to_string(),
                label: 0,
                origin: Origin::ShuffledNegative,
                ..positive.clone()
            });
        }
    }
    out
}

/// Every tenth problem in lexicographic order (indices 0, 10, 20, ...)
/// goes to evaluation, the rest to training.
pub fn split_by_problem<I, S>(problems: I) -> Result<SplitManifest, CorpusError>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let ordering: Vec<String> = problems
        .into_iter()
        .map(Into::into)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if ordering.is_empty() {
        return Err(CorpusError::NoProblems);
    }
    let mut eval_problems = BTreeSet::new();
    let mut train_problems = BTreeSet::new();
    for (i, p) in ordering.iter().enumerate() {
        if i % 10 == 0 {
            eval_problems.insert(p.clone());
        } else {
            train_problems.insert(p.clone());
        }
    }
    Ok(SplitManifest {
        ordering,
        eval_problems,
        train_problems,
    })
}

pub fn apply_length_filters(triples: &[Triple], limits: &LengthLimits) -> Vec<Triple> {
    triples.iter().filter(|t| limits.admits(t)).cloned().collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuildConfig {
    pub fuzz_budget: usize,
    pub seed_fuzz: u64,
    pub seed_negatives: u64,
    pub limits: LengthLimits,
    pub execution: ExecutionLimits,
    pub workers: usize,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            fuzz_budget: 8,
            seed_fuzz: 1,
            seed_negatives: 2,
            limits: LengthLimits::default(),
            execution: ExecutionLimits::default(),
            workers: 4,
        }
    }
}

/// Counts logged while building, serialized next to the dataset.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub programs: usize,
    pub inputs_generated: usize,
    pub failed_inputs: usize,
    pub nondeterministic_inputs: usize,
    pub positives_executed: usize,
    pub positives_after_dedup: usize,
    pub negatives: usize,
    pub no_donor_positives: Vec<String>,
    pub pairs_before_filter_train: usize,
    pub pairs_before_filter_eval: usize,
    pub triples_after_filter: usize,
    pub pairs_after_filter_train: usize,
    pub pairs_after_filter_eval: usize,
}

#[derive(Debug, Clone)]
pub struct BuiltDataset {
    pub triples: Vec<Triple>,
    pub split: SplitManifest,
    pub report: BuildReport,
}

/// Build the labeled dataset. Programs are executed by a bounded pool of
/// workers, each owning one executor from `spawn`; assembly afterwards is a
/// single-threaded reduction over the outcomes in corpus order.
pub fn build_dataset<E, F>(
    programs: &[Program],
    config: &BuildConfig,
    spawn: F,
) -> Result<BuiltDataset, CorpusError>
where
    E: Executor,
    F: Fn() -> Result<E, SidecarError> + Sync,
{
    let mut sorted: Vec<&Program> = programs.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.problem_id, &a.submission_id).cmp(&(&b.problem_id, &b.submission_id))
    });

    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let results: Mutex<Vec<Option<(usize, ExecutionOutcome)>>> =
        Mutex::new(vec![None; sorted.len()]);
    let first_error: Mutex<Option<SidecarError>> = Mutex::new(None);
    let workers = config.workers.clamp(1, sorted.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| {
                let mut executor = match spawn() {
                    Ok(e) => e,
                    Err(e) => {
                        abort.store(true, Ordering::SeqCst);
                        first_error.lock().unwrap().get_or_insert(e);
                        return;
                    }
                };
                loop {
                    if abort.load(Ordering::SeqCst) {
                        return;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(program) = sorted.get(i) else {
                        return;
                    };
                    let inputs = fuzz_inputs(program, config.fuzz_budget, config.seed_fuzz);
                    match execute_and_collect(program, &inputs, &mut executor, &config.execution) {
                        Ok(outcome) => {
                            results.lock().unwrap()[i] = Some((inputs.len(), outcome));
                        }
                        Err(e) => {
                            abort.store(true, Ordering::SeqCst);
                            first_error.lock().unwrap().get_or_insert(e);
                            return;
                        }
                    }
                }
            });
        }
    });

    if let Some(e) = first_error.into_inner().unwrap() {
        return Err(CorpusError::Sidecar(e));
    }

    let mut report = BuildReport {
        programs: sorted.len(),
        ..BuildReport::default()
    };
    let mut positives = Vec::new();
    for (generated, outcome) in results.into_inner().unwrap().into_iter().flatten() {
        report.inputs_generated += generated;
        report.failed_inputs += outcome.failed.len();
        report.nondeterministic_inputs += outcome.nondeterministic.len();
        positives.extend(outcome.positives);
    }
    report.positives_executed = positives.len();

    let positives = deduplicate(&positives);
    report.positives_after_dedup = positives.len();

    let negatives = make_negatives(&positives, config.seed_negatives);
    report.negatives = negatives.negatives.len();
    report.no_donor_positives = negatives.no_donor;

    let mut all = positives;
    all.extend(negatives.negatives);
    sort_canonical(&mut all);

    let split = split_by_problem(sorted.iter().map(|p| p.problem_id.clone()))?;
    let count = |ts: &[Triple], eval: bool| {
        ts.iter().filter(|t| split.is_eval(&t.problem_id) == eval).count()
    };
    report.pairs_before_filter_train = count(&all, false);
    report.pairs_before_filter_eval = count(&all, true);

    let filtered = apply_length_filters(&all, &config.limits);
    report.triples_after_filter = filtered.len();
    report.pairs_after_filter_train = count(&filtered, false);
    report.pairs_after_filter_eval = count(&filtered, true);

    Ok(BuiltDataset {
        triples: filtered,
        split,
        report,
    })
}

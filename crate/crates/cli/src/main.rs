use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use iodiag::corpus::{build_dataset, load_corpus, read_dataset, write_dataset, BuildConfig, SplitManifest};
use iodiag::judge::{
    aggregate, aggregate_excluding_invalid, read_records, write_records, HttpBackend, HttpConfig, JudgeBackend, JudgeCache,
    JudgeError, JudgeOptions, JudgeRunner, MockBackend, MockRule,
};
use iodiag::metrics::{read_feature_matrix, write_feature_matrix};
use iodiag::pipeline::{extract_features, write_report, Pipeline, PipelineError, RunConfig, Stage, CONFIG_FILE};
use iodiag::predictor::{auroc, read_scores, write_scores, LabeledMatrix, ScoreRow, TreeEnsembleModel};
use iodiag::sage::{draw_background, estimate_sage, SageOptions};
use iodiag::sidecar::{Sidecar, SidecarOptions};

#[derive(Parser)]
#[command(name = "iodiag", version, about = "Input/output consistency diagnostics for code-reading models")]
struct Cli {
    /// Log filter, e.g. `info` or `iodiag=debug`.
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Staged end-to-end runs.
    #[command(subcommand)]
    Pipeline(PipelineCmd),
    /// Build a labeled triple dataset from a program corpus.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Extract static features for a dataset.
    #[command(subcommand)]
    Metrics(MetricsCmd),
    /// Collect and summarize model judgments.
    #[command(subcommand)]
    Judge(JudgeCmd),
    /// Score a feature matrix with a trained model.
    Predict(PredictArgs),
    /// SAGE feature importance.
    #[command(subcommand)]
    Sage(SageCmd),
    /// AUROC of a scores file with a label column.
    Auroc {
        #[arg(long)]
        scores: PathBuf,
    },
}

#[derive(Subcommand)]
enum PipelineCmd {
    /// Run every enabled stage, or a single one.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        stage: Option<String>,
        /// Overrides `run_dir`.
        #[arg(long)]
        run_dir: Option<PathBuf>,
        /// Overrides `corpus_root`.
        #[arg(long)]
        corpus_root: Option<PathBuf>,
        /// Overrides `workers`.
        #[arg(long)]
        workers: Option<usize>,
        /// Overrides `python`.
        #[arg(long)]
        python: Option<String>,
    },
    /// Regenerate the summary documents of a run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
        /// Rows in each top-features table; defaults to the run's config.
        #[arg(long)]
        top_k: Option<usize>,
    },
}

#[derive(Subcommand)]
enum CorpusCmd {
    Build {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        fuzz_budget: usize,
        #[arg(long, default_value_t = 1)]
        seed_fuzz: u64,
        #[arg(long, default_value_t = 2)]
        seed_negatives: u64,
        #[arg(long, default_value_t = 4)]
        workers: usize,
        #[arg(long, default_value = "python3")]
        python: String,
    },
}

#[derive(Subcommand)]
enum MetricsCmd {
    Extract {
        #[arg(long)]
        dataset: PathBuf,
        /// Split manifest; the catalog is frozen on its training problems.
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        workers: usize,
        #[arg(long, default_value = "python3")]
        python: String,
    },
}

#[derive(Args)]
struct BackendArgs {
    /// Offline rule instead of an endpoint, e.g. `truth` or `yes-if-code-chars-lt:200`.
    #[arg(long, conflicts_with = "endpoint")]
    mock: Option<String>,
    /// OpenAI-compatible base URL.
    #[arg(long)]
    endpoint: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long, default_value = "OPENAI_API_KEY")]
    api_key_env: String,
    #[arg(long, default_value_t = 120.0)]
    timeout: f64,
}

#[derive(Subcommand)]
enum JudgeCmd {
    Run {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        model: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long, default_value_t = 8)]
        concurrency: usize,
        /// Requests per second across all workers.
        #[arg(long)]
        rate_limit: Option<f64>,
        /// Defaults to `<out>/cache`.
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    Report {
        #[arg(long)]
        records: PathBuf,
    },
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Judgment records; adds a label column with each triple's success.
    #[arg(long)]
    records: Option<PathBuf>,
}

#[derive(Subcommand)]
enum SageCmd {
    Run {
        #[arg(long)]
        model: PathBuf,
        /// Feature matrix of the rows to explain.
        #[arg(long)]
        data: PathBuf,
        /// Judgment records supplying the success labels.
        #[arg(long)]
        records: PathBuf,
        /// Feature matrix to draw background rows from; defaults to `--data`.
        #[arg(long)]
        background_data: Option<PathBuf>,
        #[arg(long, default_value_t = 512)]
        perms: usize,
        #[arg(long, default_value_t = 128)]
        background: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 15)]
        top_k: usize,
        /// Directory for report.json and top_features.md.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Bad flags or configuration; exits with status 2.
#[derive(Debug)]
struct UsageError(String);

impl std::error::Error for UsageError {}

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(p) = cause.downcast_ref::<PipelineError>() {
            return p.exit_code() as u8;
        }
        if cause.is::<UsageError>() || matches!(cause.downcast_ref::<JudgeError>(), Some(JudgeError::Config(_))) {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let filter = tracing_subscriber::EnvFilter::try_new(&cli.log).unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Pipeline(cmd) => pipeline(cmd),
        Command::Corpus(CorpusCmd::Build { corpus, out, fuzz_budget, seed_fuzz, seed_negatives, workers, python }) => {
            let config = BuildConfig { fuzz_budget, seed_fuzz, seed_negatives, workers, ..BuildConfig::default() };
            let programs = load_corpus(&corpus)?;
            let options = SidecarOptions { python, disable_run: false };
            let built = build_dataset(&programs, &config, || Sidecar::spawn(&options))?;
            write_dataset(&out.join("dataset.jsonl"), &built.triples)?;
            write_json(&out.join("split.json"), &built.split)?;
            write_json(&out.join("build_report.json"), &built.report)?;
            println!("{} triples written to {}", built.triples.len(), out.display());
            Ok(())
        }
        Command::Metrics(MetricsCmd::Extract { dataset, split, out, workers, python }) => {
            let triples = read_dataset(&dataset)?;
            let split: SplitManifest = read_json(&split)?;
            let (catalog, rows) = extract_features(&triples, &split, &SidecarOptions { python, disable_run: true }, workers)?;
            catalog.write(&out.join("catalog.json"))?;
            write_feature_matrix(&out.join("features.csv"), &catalog, &rows)?;
            println!("{} rows x {} features (catalog {})", rows.len(), catalog.len(), catalog.id());
            Ok(())
        }
        Command::Judge(JudgeCmd::Run { dataset, model, out, backend, concurrency, rate_limit, cache }) => {
            let backend = make_backend(&backend)?;
            let triples = read_dataset(&dataset)?;
            let options = JudgeOptions { concurrency, rate_limit, ..JudgeOptions::default() };
            let cache = JudgeCache::new(cache.unwrap_or_else(|| out.join("cache")));
            let runner = JudgeRunner::new(backend.as_ref(), &model, options, Some(cache));
            let records = runner.judge_all(&triples);
            write_records(&out.join("records.jsonl"), &records)?;
            let metrics = aggregate(&records)?;
            write_json(&out.join("metrics.json"), &metrics)?;
            println!("{} records, {} backend calls", records.len(), runner.backend_calls());
            print_metrics(&model, &metrics);
            Ok(())
        }
        Command::Judge(JudgeCmd::Report { records }) => {
            let records = read_records(&records)?;
            let model = records.first().map(|r| r.model_id.clone()).unwrap_or_default();
            let all = aggregate(&records)?;
            print_metrics(&model, &all);
            if let Ok(valid) = aggregate_excluding_invalid(&records) {
                print_metrics(&format!("{model} (valid verdicts only)"), &valid);
            }
            Ok(())
        }
        Command::Predict(args) => predict(args),
        Command::Sage(SageCmd::Run { model, data, records, background_data, perms, background, seed, top_k, out }) => {
            let model = read_model(&model)?;
            let eval = labeled(&data, &records)?;
            let bg_matrix = match background_data {
                Some(path) => labeled(&path, &records)?,
                None => eval.clone(),
            };
            let options = SageOptions { n_permutations: perms, background_size: background, seed };
            let rows = draw_background(&bg_matrix, background, seed);
            let report = estimate_sage(&model, &eval, &rows, &options)?;
            let table = report.markdown_table(top_k);
            if let Some(out) = out {
                write_text(&out.join("report.json"), &report.to_json())?;
                write_text(&out.join("top_features.md"), &table)?;
            }
            print!("{table}");
            println!("sum of values {:.6} (std. error {:.6}); base minus full loss {:.6}", report.total(), report.total_std_error, report.base_loss - report.full_loss);
            Ok(())
        }
        Command::Auroc { scores } => {
            let rows = read_scores(&scores)?;
            let labels: Option<Vec<u8>> = rows.iter().map(|r| r.label).collect();
            let Some(labels) = labels else {
                return Err(UsageError(format!("{} has rows without a label", scores.display())).into());
            };
            let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
            println!("{}", auroc(&scores, &labels)?);
            Ok(())
        }
    }
}

fn pipeline(cmd: PipelineCmd) -> Result<()> {
    match cmd {
        PipelineCmd::Run { config, stage, run_dir, corpus_root, workers, python } => {
            let mut cfg = RunConfig::load(&config)?;
            let cwd = std::env::current_dir()?;
            if let Some(d) = run_dir {
                cfg.run_dir = cwd.join(d);
            }
            if let Some(c) = corpus_root {
                cfg.corpus_root = cwd.join(c);
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            if let Some(p) = python {
                cfg.python = p;
            }
            let stage = stage.map(|s| s.parse::<Stage>()).transpose()?;
            let mut pipeline = Pipeline::open(cfg)?;
            match stage {
                Some(stage) => {
                    let outcome = pipeline.run_stage(stage)?;
                    println!("{stage}: {outcome:?}");
                    write_report(pipeline.run_dir(), pipeline.config.sage.top_k)?;
                }
                None => {
                    for (stage, outcome) in pipeline.run_all()? {
                        println!("{stage}: {outcome:?}");
                    }
                }
            }
            println!("report: {}", pipeline.run_dir().join("report/report.md").display());
            Ok(())
        }
        PipelineCmd::Report { run, top_k } => {
            let top_k = match top_k {
                Some(k) => k,
                None => {
                    let cfg: RunConfig = read_json(&run.join(CONFIG_FILE)).context("run directory has no readable config")?;
                    cfg.sage.top_k
                }
            };
            write_report(&run, top_k)?;
            print!("{}", std::fs::read_to_string(run.join("report/report.md"))?);
            Ok(())
        }
    }
}

fn make_backend(args: &BackendArgs) -> Result<Box<dyn JudgeBackend>> {
    match (&args.mock, &args.endpoint) {
        (Some(rule), _) => Ok(Box::new(MockBackend { rule: rule.parse::<MockRule>()? })),
        (None, Some(endpoint)) => {
            let config = HttpConfig { endpoint: endpoint.clone(), api_key_env: Some(args.api_key_env.clone()), request_timeout_secs: args.timeout };
            Ok(Box::new(HttpBackend::new(&config)?))
        }
        (None, None) => Err(UsageError("either --mock or --endpoint is required".into()).into()),
    }
}

fn print_metrics(model: &str, m: &iodiag::judge::AggregateMetrics) {
    println!(
        "{model}: accuracy {:.3}  precision {:.3}  recall {:.3}  F1 {:.3}  (n={}, invalid={}, tp={} fp={} tn={} fn={})",
        m.accuracy, m.precision, m.recall, m.f1, m.total, m.invalid, m.counts.tp, m.counts.fp, m.counts.tn, m.counts.fn_
    );
}

fn read_model(path: &Path) -> Result<TreeEnsembleModel> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(TreeEnsembleModel::from_json(&text)?)
}

fn success_labels(records: &Path) -> Result<BTreeMap<String, u8>> {
    Ok(read_records(records)?.into_iter().map(|r| (r.triple_id, r.success)).collect())
}

fn labeled(features: &Path, records: &Path) -> Result<LabeledMatrix> {
    let matrix = read_feature_matrix(features)?;
    let joined = LabeledMatrix::join(&matrix, &success_labels(records)?)?;
    if joined.is_empty() {
        bail!("no row of {} has a judgment in {}", features.display(), records.display());
    }
    Ok(joined)
}

fn predict(args: PredictArgs) -> Result<()> {
    let model = read_model(&args.model)?;
    let matrix = read_feature_matrix(&args.features)?;
    let labels = args.records.as_deref().map(success_labels).transpose()?;
    let catalog_id = iodiag::metrics::catalog_id_for(&matrix.names);
    let mut rows = Vec::with_capacity(matrix.rows.len());
    for (id, values) in &matrix.rows {
        let score = model.predict_proba(&catalog_id, values)?;
        let label = labels.as_ref().and_then(|l| l.get(id).copied());
        rows.push(ScoreRow { triple_id: id.clone(), score, label });
    }
    write_scores(&args.out, &rows)?;
    println!("{} rows scored", rows.len());
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    iodiag::atomic::write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

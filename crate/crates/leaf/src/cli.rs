//! The `leaf` command line: one subcommand per pipeline stage.
//!
//! Every command reads and writes JSONL files and prints a one-line
//! JSON summary (or a report table) to stdout. Outputs depend only on
//! the inputs, never on time or machine, so a rerun over the same files
//! is byte-identical. [`run_from`] is the programmatic entry point the
//! integration tests drive; `main` adds only argument parsing and the
//! error-object exit path.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::config::LeafConfig;
use crate::corpus::{load_corpus, Bm25Index, Bm25Params};
use crate::error::{Error, Result};
use crate::eval::{emit_report, load_dataset, score_run, DatasetMetrics, McqItem, ReportFormat};
use crate::factcheck::{FactCheckConfig, FactCheckReport, FactChecker, GenSettings};
use crate::fcrag::{FcRagConfig, FcRagRunner, FcRagTrace, FirstRoundKnowledge, StopReason};
use crate::gateway::{
    with_retry, Backend, GenRequest, HttpBackend, MockBackend, ThrottledBackend,
};
use crate::prompt::{Bindings, Placeholder, PromptSet};
use crate::selftrain::{build_pairs, build_sft, PairPolicy, ScoredResponse};
use crate::simpo::{grad_check, load_pairs, loss, records_into_batch, SimpoParams};
use crate::{jsonl, workers};

/// One sampled answer, as written by `generate` and read by `fact-check`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub id: String,
    pub sample_index: u32,
    pub response: String,
}

/// One fact-check result, keyed back to the item and sample it scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub id: String,
    pub sample_index: u32,
    #[serde(flatten)]
    pub report: FactCheckReport,
}

/// One model answer for `eval --predictions`; `null` means abstained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub answer: Option<char>,
}

/// Prompt text override for the training-data builders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: String,
    pub prompt: String,
}

#[derive(Parser, Debug)]
#[command(
    name = "leaf",
    version,
    about = "Sentence-level fact-checking of model answers against a local corpus"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a BM25 index from a JSONL passage corpus.
    Index(IndexArgs),
    /// Sample answers for every dataset question.
    Generate(GenerateArgs),
    /// Fact-check sampled answers sentence by sentence.
    FactCheck(FactCheckArgs),
    /// Answer questions with fact-check-gated regeneration.
    FcRag(FcRagArgs),
    /// Keep fact-check-passing responses as SFT records.
    BuildSft(BuildSftArgs),
    /// Build best-vs-worst preference pairs per prompt.
    BuildPairs(BuildPairsArgs),
    /// Evaluate the preference loss over token log-prob files.
    SimpoLoss(SimpoLossArgs),
    /// Score a run against a dataset's gold answers.
    Eval(EvalArgs),
    /// Merge metric files into one table.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct IndexArgs {
    /// Corpus JSONL: {"id", "title", "text"} per line.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Where to write the index file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1.2)]
    pub k1: f64,
    #[arg(long, default_value_t = 0.75)]
    pub b: f64,
}

#[derive(Args, Debug)]
pub struct BackendArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Replace the HTTP backend with scripted fixtures (JSONL of
    /// {"match", "responses"}).
    #[arg(long)]
    pub mock: Option<PathBuf>,
    /// Concurrent items; defaults to the config's max_parallel.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Samples per question; defaults to the config's ranking_samples.
    #[arg(long)]
    pub samples: Option<u32>,
    /// Sampling temperature; defaults to the config's ranking_temperature.
    #[arg(long)]
    pub temperature: Option<f64>,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Args, Debug)]
pub struct FactCheckArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Sampled answers: {"id", "sample_index", "response"} per line.
    #[arg(long)]
    pub responses: PathBuf,
    #[arg(long)]
    pub corpus_index: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineMode {
    /// Round 1 answers from the model's own knowledge.
    None,
    /// Round 1 retrieves with the raw question text.
    Medrag,
}

#[derive(Args, Debug)]
pub struct FcRagArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub corpus_index: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Regeneration budget; defaults to the config's max_rounds.
    #[arg(long)]
    pub max_rounds: Option<usize>,
    #[arg(long, value_enum, default_value_t = BaselineMode::None)]
    pub baseline: BaselineMode,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Args, Debug)]
pub struct BuildSftArgs {
    /// Fact-check output (the `fact-check` command's --out).
    #[arg(long)]
    pub reports: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Prompt texts per id; defaults to the dataset's answer prompts.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BuildPairsArgs {
    #[arg(long)]
    pub reports: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Minimum chosen-minus-rejected score gap to keep a prompt.
    #[arg(long, default_value_t = 0.0)]
    pub min_gap: f64,
}

#[derive(Args, Debug)]
pub struct SimpoLossArgs {
    /// Log-prob pairs: {"pair_id", "winner_logps", "loser_logps"}.
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long, default_value_t = 2.5)]
    pub beta: f64,
    #[arg(long, default_value_t = 1.4)]
    pub gamma: f64,
    /// Also compare analytic gradients against finite differences.
    #[arg(long)]
    pub grad_check: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// {"id", "answer"} per line; exclusive with --traces.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// fc-rag traces; final answers and last-round scores are used.
    #[arg(long)]
    pub traces: Option<PathBuf>,
    /// Fact-check reports keyed one-per-id, for filtered accuracy
    /// alongside --predictions.
    #[arg(long)]
    pub reports: Option<PathBuf>,
    /// Dataset label in the metrics row; defaults to the file stem.
    #[arg(long)]
    pub name: Option<String>,
    /// Write the metrics row here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Metric rows produced by `eval`, one or more files.
    #[arg(long, num_args = 1.., required = true)]
    pub metrics: Vec<PathBuf>,
    #[arg(long, default_value = "text")]
    pub format: String,
}

pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Index(args) => run_index(args),
        Command::Generate(args) => run_generate(args),
        Command::FactCheck(args) => run_fact_check(args),
        Command::FcRag(args) => run_fc_rag(args),
        Command::BuildSft(args) => run_build_sft(args),
        Command::BuildPairs(args) => run_build_pairs(args),
        Command::SimpoLoss(args) => run_simpo_loss(args),
        Command::Eval(args) => run_eval(args),
        Command::Report(args) => run_report(args),
    }
}

/// Parse and run; what `main` does, minus process exit. Integration
/// tests call this to drive whole pipelines in-process.
pub fn run_from<I, T>(args: I) -> Result<String>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::InvalidRequest {
        detail: e.to_string(),
    })?;
    run(cli)
}

fn build_backend(cfg: &LeafConfig, mock: Option<&Path>) -> Result<Box<dyn Backend>> {
    let base: Box<dyn Backend> = match mock {
        Some(path) => Box::new(MockBackend::from_fixtures(path)?),
        None => Box::new(HttpBackend::new(cfg.backend.http_config())?),
    };
    let retried = with_retry(base, cfg.backend.retry_policy());
    Ok(Box::new(ThrottledBackend::new(
        retried,
        cfg.backend.max_parallel,
    )))
}

fn worker_count(cfg: &LeafConfig, flag: Option<usize>) -> usize {
    flag.unwrap_or(cfg.backend.max_parallel).max(1)
}

/// The plain answer prompt for a question: the regeneration template
/// with an empty KNOWLEDGE block, so sampled answers and fc-rag round 1
/// see the same text.
fn qa_prompt(prompts: &PromptSet, item: &McqItem) -> String {
    prompts
        .fc_rag
        .render(
            &Bindings::new()
                .set(Placeholder::Knowledge, "N/A")
                .set(Placeholder::Question, item.question.as_str())
                .set(Placeholder::Options, item.options_line()),
        )
        .expect("all answer placeholders bound")
}

fn rater_settings(cfg: &LeafConfig) -> GenSettings {
    GenSettings {
        model: cfg.backend.model.clone(),
        temperature: cfg.factcheck.rater_temperature,
        max_tokens: cfg.factcheck.rater_max_tokens,
    }
}

fn fact_check_config(cfg: &LeafConfig) -> FactCheckConfig {
    FactCheckConfig {
        max_queries: cfg.factcheck.max_queries,
        top_k: cfg.factcheck.top_k,
    }
}

fn dataset_by_id(items: &[McqItem]) -> BTreeMap<&str, &McqItem> {
    items.iter().map(|i| (i.id.as_str(), i)).collect()
}

fn summary_line(value: serde_json::Value) -> String {
    format!("{value}\n")
}

fn run_index(args: IndexArgs) -> Result<String> {
    let docs = load_corpus(&args.corpus)?;
    let index = Bm25Index::build(docs, Bm25Params { k1: args.k1, b: args.b })?;
    index.save(&args.out)?;
    let stats = index.stats();
    Ok(summary_line(serde_json::json!({
        "doc_count": stats.doc_count,
        "avg_doc_len": stats.avg_doc_len,
        "vocab_size": stats.vocab_size,
    })))
}

fn run_generate(args: GenerateArgs) -> Result<String> {
    let cfg = LeafConfig::load_or_default(args.backend.config.as_deref())?;
    let backend = build_backend(&cfg, args.backend.mock.as_deref())?;
    let items = load_dataset(&args.dataset)?;
    let prompts = PromptSet::default();
    let samples = args.samples.unwrap_or(cfg.generation.ranking_samples).max(1);
    let temperature = args
        .temperature
        .unwrap_or(cfg.generation.ranking_temperature);
    let results = workers::map_ordered(
        &items,
        worker_count(&cfg, args.backend.workers),
        |item: &McqItem| -> Result<Vec<ResponseRecord>> {
            let request = GenRequest::user(
                &cfg.backend.model,
                qa_prompt(&prompts, item),
                temperature,
                samples,
                cfg.generation.max_tokens,
            );
            let response = backend.generate(&request)?;
            Ok(response
                .texts
                .into_iter()
                .enumerate()
                .map(|(i, text)| ResponseRecord {
                    id: item.id.clone(),
                    sample_index: i as u32,
                    response: text,
                })
                .collect())
        },
    );
    let mut records = Vec::new();
    for r in results {
        records.extend(r?);
    }
    jsonl::write(&args.out, &records)?;
    Ok(summary_line(serde_json::json!({
        "items": items.len(),
        "responses": records.len(),
    })))
}

fn load_responses(path: &Path, items: &BTreeMap<&str, &McqItem>) -> Result<Vec<ResponseRecord>> {
    let records: Vec<ResponseRecord> = jsonl::read(path)?;
    let mut seen: BTreeSet<(&str, u32)> = BTreeSet::new();
    for r in &records {
        if !items.contains_key(r.id.as_str()) {
            return Err(Error::UnknownId { id: r.id.clone() });
        }
        if !seen.insert((&r.id, r.sample_index)) {
            return Err(Error::InvalidItem {
                id: r.id.clone(),
                detail: format!("sample_index {} appears twice", r.sample_index),
            });
        }
    }
    Ok(records)
}

fn run_fact_check(args: FactCheckArgs) -> Result<String> {
    let cfg = LeafConfig::load_or_default(args.backend.config.as_deref())?;
    let backend = build_backend(&cfg, args.backend.mock.as_deref())?;
    let items = load_dataset(&args.dataset)?;
    let by_id = dataset_by_id(&items);
    let responses = load_responses(&args.responses, &by_id)?;
    let index = Bm25Index::load(&args.corpus_index)?;
    let prompts = PromptSet::default();
    let checker = FactChecker::new(
        &index,
        backend.as_ref(),
        &prompts,
        fact_check_config(&cfg),
        rater_settings(&cfg),
    );
    let results = workers::map_ordered(
        &responses,
        worker_count(&cfg, args.backend.workers),
        |r: &ResponseRecord| -> Result<ReportRecord> {
            let item = by_id[r.id.as_str()];
            let report = checker.check_response(&r.response, &item.context_string())?;
            Ok(ReportRecord {
                id: r.id.clone(),
                sample_index: r.sample_index,
                report,
            })
        },
    );
    let records = results.into_iter().collect::<Result<Vec<_>>>()?;
    jsonl::write(&args.out, &records)?;
    let passed = records.iter().filter(|r| r.report.passed()).count();
    let mean = records.iter().map(|r| r.report.leaf_score).sum::<f64>()
        / records.len().max(1) as f64;
    Ok(summary_line(serde_json::json!({
        "responses": records.len(),
        "passed": passed,
        "mean_leaf_score": mean,
    })))
}

fn run_fc_rag(args: FcRagArgs) -> Result<String> {
    let cfg = LeafConfig::load_or_default(args.backend.config.as_deref())?;
    let backend = build_backend(&cfg, args.backend.mock.as_deref())?;
    let items = load_dataset(&args.dataset)?;
    let index = Bm25Index::load(&args.corpus_index)?;
    let prompts = PromptSet::default();
    let checker = FactChecker::new(
        &index,
        backend.as_ref(),
        &prompts,
        fact_check_config(&cfg),
        rater_settings(&cfg),
    );
    let runner = FcRagRunner::new(
        backend.as_ref(),
        &checker,
        &index,
        &prompts,
        GenSettings {
            model: cfg.backend.model.clone(),
            temperature: cfg.fcrag.round1_temperature,
            max_tokens: cfg.generation.max_tokens,
        },
        FcRagConfig {
            max_rounds: args.max_rounds.unwrap_or(cfg.fcrag.max_rounds),
            first_round: match args.baseline {
                BaselineMode::None => FirstRoundKnowledge::Empty,
                BaselineMode::Medrag => FirstRoundKnowledge::RetrieveQuestion,
            },
            top_k: cfg.factcheck.top_k,
            round1_temperature: cfg.fcrag.round1_temperature,
            regen_temperature: cfg.fcrag.regen_temperature,
        },
    )?;
    let results = workers::map_ordered(
        &items,
        worker_count(&cfg, args.backend.workers),
        |item: &McqItem| runner.run(item),
    );
    let traces = results.into_iter().collect::<Result<Vec<_>>>()?;
    jsonl::write(&args.out, &traces)?;
    let count_by = |reason: StopReason| traces.iter().filter(|t| t.stop_reason == reason).count();
    Ok(summary_line(serde_json::json!({
        "items": traces.len(),
        "passed": count_by(StopReason::Passed),
        "budget_exhausted": count_by(StopReason::BudgetExhausted),
        "no_answer": count_by(StopReason::NoAnswer),
    })))
}

fn prompts_map(
    items: &[McqItem],
    override_path: Option<&Path>,
) -> Result<BTreeMap<String, String>> {
    match override_path {
        Some(path) => {
            let records: Vec<PromptRecord> = jsonl::read(path)?;
            let mut map = BTreeMap::new();
            for r in records {
                if map.insert(r.id.clone(), r.prompt).is_some() {
                    return Err(Error::DuplicateId { id: r.id });
                }
            }
            Ok(map)
        }
        None => {
            let prompts = PromptSet::default();
            Ok(items
                .iter()
                .map(|item| (item.id.clone(), qa_prompt(&prompts, item)))
                .collect())
        }
    }
}

fn scored_from_reports(path: &Path) -> Result<Vec<ScoredResponse>> {
    let records: Vec<ReportRecord> = jsonl::read(path)?;
    Ok(records
        .into_iter()
        .map(|r| ScoredResponse {
            prompt_id: r.id,
            response: r.report.response,
            leaf_score: r.report.leaf_score,
            sample_index: r.sample_index,
        })
        .collect())
}

fn run_build_sft(args: BuildSftArgs) -> Result<String> {
    let items = load_dataset(&args.dataset)?;
    let prompts = prompts_map(&items, args.prompts.as_deref())?;
    let scored = scored_from_reports(&args.reports)?;
    let records = build_sft(&scored, &prompts)?;
    jsonl::write(&args.out, &records)?;
    Ok(summary_line(serde_json::json!({
        "responses": scored.len(),
        "records": records.len(),
    })))
}

fn run_build_pairs(args: BuildPairsArgs) -> Result<String> {
    let items = load_dataset(&args.dataset)?;
    let prompts = prompts_map(&items, args.prompts.as_deref())?;
    let scored = scored_from_reports(&args.reports)?;
    let build = build_pairs(&scored, &prompts, PairPolicy { min_gap: args.min_gap })?;
    let wire: Vec<_> = build.pairs.iter().map(|p| p.to_wire()).collect();
    jsonl::write(&args.out, &wire)?;
    Ok(summary_line(serde_json::json!({
        "pairs": build.pairs.len(),
        "skipped_single": build.skipped_single,
        "skipped_no_gap": build.skipped_no_gap,
        "skipped_below_gap": build.skipped_below_gap,
    })))
}

fn run_simpo_loss(args: SimpoLossArgs) -> Result<String> {
    let params = SimpoParams::new(args.beta, args.gamma)?;
    let records = load_pairs(&args.pairs)?;
    let batch = records_into_batch(&records, params)?;
    let mut body = serde_json::json!({
        "pairs": records.len(),
        "beta": params.beta,
        "gamma": params.gamma,
        "degenerate_margin": params.is_degenerate_margin(),
        "loss": loss(&batch),
    });
    if args.grad_check {
        const REL_TOL: f64 = 1e-6;
        let report = grad_check(&batch, 1e-5);
        body["grad_check"] = serde_json::json!({
            "entries": report.entries,
            "max_abs_diff": report.max_abs_diff,
            "max_rel_diff": report.max_rel_diff,
            "rel_tol": REL_TOL,
            "ok": report.within(REL_TOL),
        });
    }
    Ok(summary_line(body))
}

fn run_eval(args: EvalArgs) -> Result<String> {
    let items = load_dataset(&args.dataset)?;
    let (predictions, leaf_scores): (
        BTreeMap<String, Option<char>>,
        Option<BTreeMap<String, f64>>,
    ) = match (&args.predictions, &args.traces) {
        (Some(_), Some(_)) | (None, None) => {
            return Err(Error::InvalidRequest {
                detail: "pass exactly one of --predictions and --traces".to_owned(),
            })
        }
        (Some(path), None) => {
            let records: Vec<PredictionRecord> = jsonl::read(path)?;
            let mut map = BTreeMap::new();
            for r in records {
                if map.insert(r.id.clone(), r.answer).is_some() {
                    return Err(Error::DuplicateId { id: r.id });
                }
            }
            let scores = match &args.reports {
                None => None,
                Some(reports_path) => {
                    let records: Vec<ReportRecord> = jsonl::read(reports_path)?;
                    let mut scores = BTreeMap::new();
                    for r in &records {
                        if scores.insert(r.id.clone(), r.report.leaf_score).is_some() {
                            return Err(Error::RunMismatch {
                                detail: format!(
                                    "reports hold several samples for item {:?}; filtered \
                                     accuracy needs exactly one response per item",
                                    r.id
                                ),
                            });
                        }
                    }
                    Some(scores)
                }
            };
            (map, scores)
        }
        (None, Some(path)) => {
            if args.reports.is_some() {
                return Err(Error::InvalidRequest {
                    detail: "--reports only applies to --predictions; traces carry their own \
                             fact-check scores"
                        .to_owned(),
                });
            }
            let traces: Vec<FcRagTrace> = jsonl::read(path)?;
            let mut map = BTreeMap::new();
            let mut scores = BTreeMap::new();
            for t in &traces {
                if map.insert(t.item.id.clone(), t.final_answer).is_some() {
                    return Err(Error::DuplicateId {
                        id: t.item.id.clone(),
                    });
                }
                if let Some(round) = t.rounds.last() {
                    scores.insert(t.item.id.clone(), round.report.leaf_score);
                }
            }
            (map, Some(scores))
        }
    };
    let metrics = score_run(&items, &predictions, leaf_scores.as_ref())?;
    let name = match args.name {
        Some(name) => name,
        None => args
            .dataset
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".to_owned()),
    };
    let row = DatasetMetrics {
        dataset: name,
        metrics,
    };
    let line = format!("{}\n", serde_json::to_string(&row)?);
    match &args.out {
        Some(path) => {
            std::fs::write(path, &line).map_err(|e| Error::io(path, e))?;
            Ok(summary_line(serde_json::json!({
                "dataset": row.dataset,
                "total": row.metrics.total,
                "accuracy": row.metrics.accuracy,
            })))
        }
        None => Ok(line),
    }
}

fn run_report(args: ReportArgs) -> Result<String> {
    let format: ReportFormat = args.format.parse()?;
    let mut rows: Vec<DatasetMetrics> = Vec::new();
    for path in &args.metrics {
        rows.extend(jsonl::read::<DatasetMetrics>(path)?);
    }
    emit_report(&rows, format)
}

//! Command-line pipeline: ingest, score, summarize, query, trend,
//! simulate, fit.
//!
//! Exit codes are fixed for scripting: 2 config error, 3 total ingest
//! failure, 4 LLM endpoint unreachable, 5 nothing to summarize, 6 numeric
//! blow-up. All outputs land under `--output`; with `--offline` and the
//! same seed a re-run is byte-identical except for `manifest.json`, the
//! one file carrying wall-clock timestamps.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use opinion_pulse_core::bayestrend::{fit_trend, SamplerConfig, TrendModelSpec};
use opinion_pulse_core::opiniondyn::{fit, integrate, FitConfig, OdeError, Trajectory};
use opinion_pulse_core::prompt::PROMPT_VERSION;
use opinion_pulse_core::stats::{aggregate_scores, site_domain, GroupBy};
use opinion_pulse_core::types::{DocumentAnalysis, ScoreKind, SourceDocument};

use crate::connectors::{Connector, ConnectorConfig, ConnectorError, SearchSpec, TaggedUrl};
use crate::csvio::{self, ScoreRow};
use crate::llm::{
    analyze_document, answer_query, summarize_summaries, summary_entry, ChatClient, ChatConfig,
    LlmError,
};
use crate::scenario::Scenario;
use crate::store::{CorruptPolicy, JsonlStore};
use crate::svg;
use crate::transport::parallel_map_ordered;

/// Opinion analytics over news-like sources: ingest, two-level scoring,
/// Bayesian trends, and opinion-dynamics scenarios.
#[derive(Debug, Parser)]
#[command(name = "opinion-pulse", version, max_term_width = 100)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args, Clone)]
pub struct RunArgs {
    /// Pipeline configuration file (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Directory receiving stores, reports, CSVs and SVGs.
    #[arg(long, default_value = "out", global = true)]
    pub output: PathBuf,

    /// Resolve every connector and LLM call from fixtures; never touch the
    /// network.
    #[arg(long, global = true)]
    pub offline: bool,

    /// Seed for samplers and fitters.
    #[arg(long, default_value_t = 0, global = true)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Collect documents from the configured sources into the store.
    Ingest(IngestArgs),
    /// Run level-1 scoring over unanalyzed documents (resumable).
    Score,
    /// Produce the level-2 "summary of summaries" report.
    Summarize,
    /// Answer a natural-language question over the collected analyses.
    Query(QueryArgs),
    /// Fit Bayesian score trends per group and draw box plots.
    Trend(TrendArgs),
    /// Integrate an opinion-dynamics scenario and plot it.
    Simulate(ScenarioArgs),
    /// Recover model parameters from an observed opinion path.
    Fit(ScenarioArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Comma-separated source kinds to ingest (web,youtube,reddit).
    #[arg(long, default_value = "web,youtube,reddit", value_delimiter = ',')]
    pub sources: Vec<String>,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    /// The natural-language question.
    #[arg(long)]
    pub question: String,
}

#[derive(Debug, Args)]
pub struct TrendArgs {
    /// Score table CSV (label,score_kind,t,score,n); defaults to building
    /// rows from the document and analysis stores.
    #[arg(long)]
    pub scores: Option<PathBuf>,

    /// Grouping for store-derived rows: site, source_kind or period.
    #[arg(long, default_value = "site")]
    pub group_by: String,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Scenario file (JSON).
    #[arg(long)]
    pub scenario: PathBuf,
}

/// Errors mapped onto the fixed exit-code table.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("ingest produced no documents: {0}")]
    IngestFailed(String),
    #[error("LLM endpoint unreachable: {0}")]
    LlmUnreachable(String),
    #[error("nothing to summarize: {0}")]
    NothingToDo(String),
    #[error("numeric blow-up: {0}")]
    BlowUp(String),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::IngestFailed(_) => 3,
            CliError::LlmUnreachable(_) => 4,
            CliError::NothingToDo(_) => 5,
            CliError::BlowUp(_) => 6,
            CliError::Other(_) => 1,
        }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn llm_err(err: LlmError) -> CliError {
    match err {
        LlmError::Transport { reason } => CliError::LlmUnreachable(reason),
        LlmError::Status { status } => CliError::LlmUnreachable(format!("status {status}")),
        LlmError::MissingReplay { fingerprint } => {
            config_err(format!("missing LLM replay fixture {fingerprint}.json"))
        }
        LlmError::EmptyInput => CliError::NothingToDo(err.to_string()),
        other => CliError::Other(anyhow::Error::new(other)),
    }
}

/// Per-backend sections of the pipeline configuration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Fixture root; required in offline mode. Connector fixtures live
    /// flat in this directory, LLM replay files under `llm/`.
    #[serde(default)]
    pub fixture_dir: Option<PathBuf>,
    pub queries: Vec<String>,
    pub periods: Vec<String>,
    /// Web hits requested per (query, period).
    #[serde(default = "default_max_results")]
    pub max_results: usize,
    pub search: ConnectorConfig,
    #[serde(default)]
    pub youtube: Option<YoutubeSection>,
    #[serde(default)]
    pub reddit: Option<RedditSection>,
    pub llm: ChatConfig,
}

fn default_max_results() -> usize {
    70
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct YoutubeSection {
    #[serde(flatten)]
    pub connector: ConnectorConfig,
    #[serde(default = "default_min_views")]
    pub min_views: u64,
    pub queries: Vec<String>,
    pub period_label: String,
}

fn default_min_views() -> u64 {
    500_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RedditSection {
    #[serde(flatten)]
    pub connector: ConnectorConfig,
    #[serde(default = "default_reddit_limit")]
    pub limit: usize,
    pub queries: Vec<String>,
    pub period_label: String,
}

fn default_reddit_limit() -> usize {
    100
}

impl PipelineConfig {
    pub fn load(path: &Path, offline: bool) -> Result<PipelineConfig, CliError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&raw)
            .map_err(|e| config_err(format!("config {} is not valid: {e}", path.display())))?;

        // Relative paths resolve against the config file's directory.
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(dir) = &cfg.fixture_dir {
            if dir.is_relative() {
                cfg.fixture_dir = Some(base.join(dir));
            }
        }

        // Conventional key environment variables unless the config names
        // its own; all optional in fixture mode.
        if cfg.search.api_key_env.is_none() {
            cfg.search.api_key_env = Some("SEARCH_API_KEY".into());
        }
        if let Some(yt) = &mut cfg.youtube {
            if yt.connector.api_key_env.is_none() {
                yt.connector.api_key_env = Some("YOUTUBE_API_KEY".into());
            }
        }
        if let Some(rd) = &mut cfg.reddit {
            if rd.connector.api_key_env.is_none() {
                rd.connector.api_key_env = Some("REDDIT_TOKEN".into());
                rd.connector.auth_style = crate::connectors::AuthStyle::Bearer;
            }
        }

        if offline {
            let Some(dir) = cfg.fixture_dir.clone() else {
                return Err(config_err("--offline requires fixture_dir in the config"));
            };
            cfg.search.fixture_dir = Some(dir.clone());
            if let Some(yt) = &mut cfg.youtube {
                yt.connector.fixture_dir = Some(dir.clone());
            }
            if let Some(rd) = &mut cfg.reddit {
                rd.connector.fixture_dir = Some(dir.clone());
            }
            cfg.llm.replay_dir = Some(dir.join("llm"));
        }
        Ok(cfg)
    }
}

struct Paths {
    output: PathBuf,
}

impl Paths {
    fn new(output: &Path) -> Result<Paths, CliError> {
        std::fs::create_dir_all(output)
            .map_err(|e| config_err(format!("cannot create output dir: {e}")))?;
        Ok(Paths {
            output: output.to_path_buf(),
        })
    }

    fn documents(&self) -> PathBuf {
        self.output.join("documents.jsonl")
    }

    fn analyses(&self) -> PathBuf {
        self.output.join("analyses.jsonl")
    }

    fn sub(&self, dir: &str) -> Result<PathBuf, CliError> {
        let path = self.output.join(dir);
        std::fs::create_dir_all(&path)
            .map_err(|e| config_err(format!("cannot create {}: {e}", path.display())))?;
        Ok(path)
    }
}

#[derive(Debug, Default, Serialize)]
struct SourceCounts {
    attempted: usize,
    succeeded: usize,
    failed: usize,
    failures: Vec<FailureEntry>,
}

#[derive(Debug, Serialize)]
struct FailureEntry {
    url: String,
    reason: String,
}

#[derive(Debug, Default, Serialize)]
struct IngestReport {
    search_calls: usize,
    web: SourceCounts,
    youtube_considered: usize,
    youtube_pairs: usize,
    youtube_below_threshold: usize,
    youtube_no_transcript: usize,
    reddit_threads: usize,
    documents_stored: usize,
    documents_already_present: usize,
}

fn load_config(run: &RunArgs) -> Result<PipelineConfig, CliError> {
    let path = run
        .config
        .as_ref()
        .ok_or_else(|| config_err("this command needs --config"))?;
    PipelineConfig::load(path, run.offline)
}

fn load_documents(paths: &Paths) -> Result<Vec<SourceDocument>, CliError> {
    let store: JsonlStore<SourceDocument> = JsonlStore::new(paths.documents());
    Ok(store
        .load_all(CorruptPolicy::Strict)
        .map_err(|e| CliError::Other(e.into()))?
        .records)
}

fn load_analyses(paths: &Paths) -> Result<Vec<DocumentAnalysis>, CliError> {
    let store: JsonlStore<DocumentAnalysis> = JsonlStore::new(paths.analyses());
    Ok(store
        .load_all(CorruptPolicy::Strict)
        .map_err(|e| CliError::Other(e.into()))?
        .records)
}

pub fn cmd_ingest(args: &IngestArgs, run: &RunArgs) -> Result<(), CliError> {
    let cfg = load_config(run)?;
    let paths = Paths::new(&run.output)?;
    for source in &args.sources {
        if !["web", "youtube", "reddit"].contains(&source.as_str()) {
            return Err(config_err(format!(
                "unknown source kind {source:?}; usage: --sources web,youtube,reddit"
            )));
        }
    }

    let store: JsonlStore<SourceDocument> = JsonlStore::new(paths.documents());
    let existing: std::collections::BTreeSet<String> = store
        .load_all(CorruptPolicy::Strict)
        .map_err(|e| CliError::Other(e.into()))?
        .records
        .into_iter()
        .map(|d| d.id)
        .collect();

    let mut report = IngestReport::default();
    let mut new_docs: Vec<SourceDocument> = Vec::new();
    let mut note_doc = |doc: SourceDocument, report: &mut IngestReport| {
        if existing.contains(&doc.id) || new_docs.iter().any(|d| d.id == doc.id) {
            report.documents_already_present += 1;
        } else {
            new_docs.push(doc);
        }
    };

    if args.sources.iter().any(|s| s == "web") {
        let connector = Connector::with_default_clock(cfg.search.clone());
        let mut tagged: Vec<TaggedUrl> = Vec::new();
        for query in &cfg.queries {
            for period in &cfg.periods {
                let spec = SearchSpec {
                    query: query.clone(),
                    period_label: period.clone(),
                    max_results: cfg.max_results,
                };
                match connector.search_resources(&spec) {
                    Ok(outcome) => {
                        report.search_calls += outcome.requests;
                        tagged.extend(outcome.urls);
                    }
                    Err(ConnectorError::Transport(e)) => {
                        return Err(config_err(format!("search failed: {e}")))
                    }
                    Err(e) => {
                        report.web.failures.push(FailureEntry {
                            url: format!("search {query:?} {period}"),
                            reason: e.to_string(),
                        });
                        report.web.failed += 1;
                    }
                }
            }
        }
        report.web.attempted += tagged.len();
        for (url, result) in connector.fetch_web_documents(&tagged) {
            match result {
                Ok(doc) => {
                    report.web.succeeded += 1;
                    note_doc(doc, &mut report);
                }
                Err(e) => {
                    report.web.failed += 1;
                    report.web.failures.push(FailureEntry {
                        url: url.url,
                        reason: e.to_string(),
                    });
                }
            }
        }
    }

    if args.sources.iter().any(|s| s == "youtube") {
        if let Some(section) = &cfg.youtube {
            let connector = Connector::with_default_clock(section.connector.clone());
            for query in &section.queries {
                let batch = connector
                    .fetch_youtube(query, section.min_views, &section.period_label)
                    .map_err(|e| CliError::IngestFailed(e.to_string()))?;
                report.youtube_considered += batch.considered;
                report.youtube_below_threshold += batch.below_threshold;
                report.youtube_no_transcript += batch.skipped.len();
                report.youtube_pairs += batch.pairs.len();
                for (video, comments) in batch.pairs {
                    note_doc(video, &mut report);
                    if let Some(comments) = comments {
                        note_doc(comments, &mut report);
                    }
                }
            }
        }
    }

    if args.sources.iter().any(|s| s == "reddit") {
        if let Some(section) = &cfg.reddit {
            let connector = Connector::with_default_clock(section.connector.clone());
            for query in &section.queries {
                let docs = connector
                    .fetch_reddit(query, section.limit, &section.period_label)
                    .map_err(|e| CliError::IngestFailed(e.to_string()))?;
                report.reddit_threads += docs.len();
                for doc in docs {
                    note_doc(doc, &mut report);
                }
            }
        }
    }

    for doc in &new_docs {
        store.append(doc).map_err(|e| CliError::Other(e.into()))?;
    }
    report.documents_stored = new_docs.len();

    let report_json =
        serde_json::to_string_pretty(&report).map_err(|e| CliError::Other(e.into()))?;
    std::fs::write(paths.output.join("ingest_report.json"), &report_json)
        .map_err(|e| CliError::Other(e.into()))?;

    println!(
        "ingest: {} stored, {} already present, {} search calls, web {}/{} ok",
        report.documents_stored,
        report.documents_already_present,
        report.search_calls,
        report.web.succeeded,
        report.web.attempted
    );
    for failure in &report.web.failures {
        println!("  skipped {}: {}", failure.url, failure.reason);
    }

    if report.documents_stored == 0 && report.documents_already_present == 0 {
        return Err(CliError::IngestFailed(
            "no source produced any document".into(),
        ));
    }
    Ok(())
}

/// Writes the score tables derived from the analyses store.
fn write_score_tables(
    paths: &Paths,
    docs: &[SourceDocument],
    analyses: &[DocumentAnalysis],
) -> Result<(), CliError> {
    let by_id: BTreeMap<&str, &SourceDocument> = docs.iter().map(|d| (d.id.as_str(), d)).collect();
    let scored: Vec<&DocumentAnalysis> = analyses
        .iter()
        .filter(|a| a.relevant && a.scores.is_some())
        .collect();
    csvio::write_raw_scores(&paths.output.join("raw_scores.csv"), &scored)
        .map_err(|e| CliError::Other(e.into()))?;

    let pairs: Vec<(&SourceDocument, &DocumentAnalysis)> = scored
        .iter()
        .filter_map(|a| by_id.get(a.doc_id.as_str()).map(|d| (*d, *a)))
        .collect();
    if !pairs.is_empty() {
        let groups = aggregate_scores(&pairs, GroupBy::Period)
            .map_err(|e| CliError::Other(anyhow::Error::new(e)))?;
        let t_of: BTreeMap<&str, u32> = period_index(groups.iter().map(|g| g.label.as_str()));
        let rows: Vec<(u32, &opinion_pulse_core::stats::GroupStats)> =
            groups.iter().map(|g| (t_of[g.label.as_str()], g)).collect();
        csvio::write_aggregates(&paths.output.join("aggregates_by_period.csv"), &rows)
            .map_err(|e| CliError::Other(e.into()))?;
    }
    Ok(())
}

/// Sorted distinct labels become period indexes 1..n.
fn period_index<'a>(labels: impl Iterator<Item = &'a str>) -> BTreeMap<&'a str, u32> {
    let distinct: std::collections::BTreeSet<&str> = labels.collect();
    distinct
        .into_iter()
        .enumerate()
        .map(|(i, l)| (l, (i + 1) as u32))
        .collect()
}

pub fn cmd_score(run: &RunArgs) -> Result<(), CliError> {
    let cfg = load_config(run)?;
    let paths = Paths::new(&run.output)?;
    let docs = load_documents(&paths)?;
    if docs.is_empty() {
        return Err(CliError::NothingToDo("document store is empty".into()));
    }

    let analyses_store: JsonlStore<DocumentAnalysis> = JsonlStore::new(paths.analyses());
    let already: std::collections::BTreeSet<String> = load_analyses(&paths)?
        .into_iter()
        .map(|a| a.doc_id)
        .collect();

    let client = ChatClient::new(cfg.llm.clone());
    let pending: Vec<&SourceDocument> = docs.iter().filter(|d| !already.contains(&d.id)).collect();
    let budget = cfg.llm.token_budget;

    let results = parallel_map_ordered(pending, cfg.llm.in_flight, |doc| {
        (doc.id.clone(), analyze_document(doc, &client, budget))
    });

    let mut scored = 0usize;
    let mut failed: Vec<(String, String)> = Vec::new();
    for (_doc_id, result) in results {
        match result {
            Ok(analysis) => {
                analyses_store
                    .append(&analysis)
                    .map_err(|e| CliError::Other(e.into()))?;
                scored += 1;
            }
            Err(LlmError::MalformedAfterRetry { doc_id, last }) => {
                failed.push((doc_id, last.to_string()));
            }
            Err(other) => return Err(llm_err(other)),
        }
    }

    let docs_all = load_documents(&paths)?;
    let analyses_all = load_analyses(&paths)?;
    write_score_tables(&paths, &docs_all, &analyses_all)?;

    let retried = analyses_all.iter().filter(|a| a.retry_count > 0).count();
    let scoring_report = serde_json::json!({
        "newly_analyzed": scored,
        "already_scored": already.len(),
        "retry_recovered": retried,
        "failed": failed
            .iter()
            .map(|(doc_id, reason)| serde_json::json!({"doc_id": doc_id, "reason": reason}))
            .collect::<Vec<_>>(),
    });
    std::fs::write(
        paths.output.join("scoring_report.json"),
        serde_json::to_string_pretty(&scoring_report).map_err(|e| CliError::Other(e.into()))?,
    )
    .map_err(|e| CliError::Other(e.into()))?;

    println!(
        "score: {scored} newly analyzed, {} skipped (already scored), {} failed",
        already.len(),
        failed.len()
    );
    for (doc_id, reason) in &failed {
        println!("  failed {doc_id}: {reason}");
    }
    Ok(())
}

/// Joined (document, analysis) pairs for relevant scored analyses.
fn relevant_pairs<'a>(
    docs: &'a [SourceDocument],
    analyses: &'a [DocumentAnalysis],
) -> Vec<(&'a SourceDocument, &'a DocumentAnalysis)> {
    let by_id: BTreeMap<&str, &SourceDocument> = docs.iter().map(|d| (d.id.as_str(), d)).collect();
    analyses
        .iter()
        .filter(|a| a.relevant && a.scores.is_some())
        .filter_map(|a| by_id.get(a.doc_id.as_str()).map(|d| (*d, a)))
        .collect()
}

pub fn cmd_summarize(run: &RunArgs) -> Result<(), CliError> {
    let cfg = load_config(run)?;
    let paths = Paths::new(&run.output)?;
    let docs = load_documents(&paths)?;
    let analyses = load_analyses(&paths)?;
    let pairs = relevant_pairs(&docs, &analyses);
    if pairs.is_empty() {
        return Err(CliError::NothingToDo(
            "no relevant analyses in store".into(),
        ));
    }

    let entries: Vec<_> = pairs
        .iter()
        .filter_map(|(d, a)| summary_entry(d, a))
        .collect();
    let client = ChatClient::new(cfg.llm.clone());
    let outcome = summarize_summaries(&entries, &client, cfg.llm.token_budget).map_err(llm_err)?;

    let mut body = String::new();
    body.push_str(&format!(
        "# Summary of summaries\n\nsources: {}\nprompt_version: {PROMPT_VERSION}\nchunk_passes: {}\n\n",
        entries.len(),
        outcome.chunk_calls
    ));
    body.push_str(&outcome.report);
    body.push('\n');
    std::fs::write(paths.output.join("summary_report.md"), body)
        .map_err(|e| CliError::Other(e.into()))?;
    println!(
        "summarize: {} sources, {} chunk passes, report written",
        entries.len(),
        outcome.chunk_calls
    );
    Ok(())
}

pub fn cmd_query(args: &QueryArgs, run: &RunArgs) -> Result<(), CliError> {
    let cfg = load_config(run)?;
    let paths = Paths::new(&run.output)?;
    let docs = load_documents(&paths)?;
    let analyses = load_analyses(&paths)?;
    let pairs = relevant_pairs(&docs, &analyses);
    if pairs.is_empty() {
        return Err(CliError::NothingToDo(
            "no relevant analyses in store".into(),
        ));
    }

    let client = ChatClient::new(cfg.llm.clone());
    let report =
        answer_query(&pairs, &args.question, &client, cfg.llm.token_budget).map_err(llm_err)?;

    let mut body = String::new();
    body.push_str(&format!(
        "# Query report\n\nquestion: {}\n\n",
        args.question
    ));
    body.push_str(&report.text);
    body.push_str("\n\n## Link verification\n\n");
    for cited in &report.cited {
        body.push_str(&format!(
            "- {} {}\n",
            cited.url,
            if cited.verified {
                "(verified: in corpus)"
            } else {
                "(UNVERIFIED: not in corpus)"
            }
        ));
    }
    std::fs::write(paths.output.join("query_report.md"), body)
        .map_err(|e| CliError::Other(e.into()))?;
    println!(
        "query: {} links cited, {} unverified",
        report.cited.len(),
        report.unverified()
    );
    Ok(())
}

fn score_rows_from_store(paths: &Paths, group_by: GroupBy) -> Result<Vec<ScoreRow>, CliError> {
    let docs = load_documents(&paths_ref(paths))?;
    let analyses = load_analyses(&paths_ref(paths))?;
    let pairs = relevant_pairs(&docs, &analyses);
    let t_of = period_index(pairs.iter().map(|(d, _)| d.period_label.as_str()));
    let mut rows = Vec::new();
    for (doc, analysis) in &pairs {
        let scores = analysis.scores.expect("relevant pairs are scored");
        let label = match group_by {
            GroupBy::Site => site_domain(&doc.url),
            GroupBy::SourceKind => doc.source_kind.as_str().to_string(),
            GroupBy::Period => doc.period_label.clone(),
        };
        for kind in ScoreKind::ALL {
            rows.push(ScoreRow {
                label: label.clone(),
                score_kind: kind,
                t: t_of[doc.period_label.as_str()],
                score: f64::from(scores.get(kind)),
                n: 1,
            });
        }
    }
    rows.sort_by(|a, b| {
        (&a.label, a.score_kind, a.t)
            .cmp(&(&b.label, b.score_kind, b.t))
            .then(a.score.total_cmp(&b.score))
    });
    Ok(rows)
}

fn paths_ref(paths: &Paths) -> Paths {
    Paths {
        output: paths.output.clone(),
    }
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

pub fn cmd_trend(args: &TrendArgs, run: &RunArgs) -> Result<(), CliError> {
    let paths = Paths::new(&run.output)?;
    let group_by = match args.group_by.as_str() {
        "site" => GroupBy::Site,
        "source_kind" => GroupBy::SourceKind,
        "period" => GroupBy::Period,
        other => return Err(config_err(format!("unknown grouping {other:?}"))),
    };
    let rows = match &args.scores {
        Some(path) => csvio::read_score_rows(path)
            .map_err(|e| config_err(format!("bad scores table: {e}")))?,
        None => score_rows_from_store(&paths, group_by)?,
    };
    if rows.is_empty() {
        return Err(CliError::NothingToDo("no score rows to fit".into()));
    }

    let trend_dir = paths.sub("trend")?;
    let spec = TrendModelSpec::default();
    let sampler_cfg = SamplerConfig {
        seed: run.seed,
        ..SamplerConfig::default()
    };

    let mut fits = Vec::new();
    let mut skipped = Vec::new();
    for series in csvio::rows_to_series(&rows) {
        if let Err(e) = series.validate() {
            skipped.push((series.label.clone(), series.score_kind, e.to_string()));
            continue;
        }
        let summary = fit_trend(&series, &spec, &sampler_cfg)
            .map_err(|e| CliError::Other(anyhow::Error::new(e)))?;
        csvio::write_draws(
            &trend_dir.join(format!(
                "draws_{}_{}.csv",
                sanitize(&series.label),
                series.score_kind.as_str()
            )),
            &summary,
        )
        .map_err(|e| CliError::Other(e.into()))?;
        fits.push((series.label.clone(), series.score_kind, summary));
    }
    for (label, kind, reason) in &skipped {
        println!("warning: skipped {label}/{}: {reason}", kind.as_str());
    }
    if fits.is_empty() {
        return Err(CliError::NothingToDo(
            "every group failed the trend preconditions".into(),
        ));
    }

    csvio::write_trend_summary(&trend_dir.join("trend_summary.csv"), &fits)
        .map_err(|e| CliError::Other(e.into()))?;

    // One box-plot figure per (score kind, parameter), one box per group.
    for kind in ScoreKind::ALL {
        for param in ["alpha", "beta"] {
            let boxes: Vec<svg::BoxStats> = fits
                .iter()
                .filter(|(_, k, _)| *k == kind)
                .filter_map(|(label, _, summary)| {
                    summary
                        .param(param)
                        .map(|p| svg::BoxStats::from_param(label, p))
                })
                .collect();
            if boxes.is_empty() {
                continue;
            }
            let figure = svg::box_plot(
                &format!("{param} posterior by group ({})", kind.as_str()),
                param,
                &boxes,
            );
            std::fs::write(
                trend_dir.join(format!("boxplot_{}_{param}.svg", kind.as_str())),
                figure,
            )
            .map_err(|e| CliError::Other(e.into()))?;
        }
    }

    let not_converged: Vec<&str> = fits
        .iter()
        .filter(|(_, _, s)| !s.converged)
        .map(|(l, _, _)| l.as_str())
        .collect();
    if !not_converged.is_empty() {
        println!(
            "warning: R-hat above 1.05 for: {}",
            not_converged.join(", ")
        );
    }
    println!(
        "trend: {} fits over {} skipped groups, outputs in {}",
        fits.len(),
        skipped.len(),
        trend_dir.display()
    );
    Ok(())
}

fn blow_up(err: OdeError) -> CliError {
    match err {
        OdeError::NonFinite(t) => CliError::BlowUp(format!("state non-finite at t = {t}")),
        OdeError::Diverged { iteration } => {
            CliError::BlowUp(format!("fit lost a finite loss at iteration {iteration}"))
        }
        other => CliError::Config(other.to_string()),
    }
}

pub fn cmd_simulate(args: &ScenarioArgs, run: &RunArgs) -> Result<(), CliError> {
    let scenario = Scenario::load(&args.scenario).map_err(|e| config_err(e.to_string()))?;
    let paths = Paths::new(&run.output)?;
    let sim_dir = paths.sub("sim")?;

    let schedule = scenario.schedule();
    let traj = integrate(
        &scenario.params,
        &schedule,
        scenario.x0,
        scenario.e0,
        scenario.t0,
        scenario.t1,
        scenario.dt,
    )
    .map_err(blow_up)?;

    csvio::write_trajectory(&sim_dir.join("trajectory.csv"), &traj)
        .map_err(|e| CliError::Other(e.into()))?;
    std::fs::write(
        sim_dir.join("trajectory.svg"),
        svg::trajectory_plot("Opinion dynamics under impulses", &traj, &schedule),
    )
    .map_err(|e| CliError::Other(e.into()))?;

    let (x_final, e_final) = traj.final_state();
    println!(
        "simulate: {} steps, x({}) = {:.6}, E = {:.6}, {} opinion sign changes",
        traj.len() - 1,
        scenario.t1,
        x_final,
        e_final,
        traj.sign_changes(0.05)
    );
    Ok(())
}

pub fn cmd_fit(args: &ScenarioArgs, run: &RunArgs) -> Result<(), CliError> {
    let scenario = Scenario::load(&args.scenario).map_err(|e| config_err(e.to_string()))?;
    let Some(fit_section) = scenario.fit.clone() else {
        return Err(config_err("scenario has no fit section"));
    };
    let paths = Paths::new(&run.output)?;
    let fit_dir = paths.sub("fit")?;
    let schedule = scenario.schedule();

    let observed: Trajectory = match &fit_section.observed_csv {
        Some(rel) => {
            let base = args.scenario.parent().unwrap_or(Path::new("."));
            let rows = std::fs::read_to_string(base.join(rel))
                .map_err(|e| config_err(format!("cannot read observed csv: {e}")))?;
            parse_trajectory_csv(&rows).map_err(config_err)?
        }
        None => integrate(
            &scenario.params,
            &schedule,
            scenario.x0,
            scenario.e0,
            scenario.t0,
            scenario.t1,
            scenario.dt,
        )
        .map_err(blow_up)?,
    };

    let cfg = FitConfig {
        init_params: fit_section.init_params,
        learning_rate: fit_section.learning_rate,
        max_iters: fit_section.max_iters,
        loss_tol: fit_section.loss_tol,
        observed,
        include_influence: fit_section.include_influence,
        seed: run.seed,
    };
    let result = fit(&cfg, &schedule, scenario.x0, scenario.e0, scenario.dt).map_err(blow_up)?;

    csvio::write_fit_path(&fit_dir.join("fit_path.csv"), &result)
        .map_err(|e| CliError::Other(e.into()))?;

    let iters: Vec<f64> = (0..result.iterations).map(|i| i as f64).collect();
    let loss_fig = svg::line_plot(
        "Training loss",
        "iteration",
        "loss (log10)",
        &[svg::Series {
            name: "loss",
            color: "#d62728",
            xs: &iters,
            ys: &result
                .loss_history
                .iter()
                .map(|l| l.max(1e-300).log10())
                .collect::<Vec<f64>>(),
        }],
        None,
    );
    std::fs::write(fit_dir.join("loss.svg"), loss_fig).map_err(|e| CliError::Other(e.into()))?;

    let series_of = |idx: usize| -> Vec<f64> {
        result
            .param_history
            .iter()
            .map(|p| p.as_array()[idx])
            .collect()
    };
    let (pa, pb, pc, pd) = (series_of(0), series_of(1), series_of(2), series_of(3));
    let params_fig = svg::line_plot(
        "Parameter convergence",
        "iteration",
        "value",
        &[
            svg::Series {
                name: "a",
                color: "#d62728",
                xs: &iters,
                ys: &pa,
            },
            svg::Series {
                name: "b",
                color: "#1f77b4",
                xs: &iters,
                ys: &pb,
            },
            svg::Series {
                name: "c",
                color: "#2ca02c",
                xs: &iters,
                ys: &pc,
            },
            svg::Series {
                name: "d",
                color: "#9467bd",
                xs: &iters,
                ys: &pd,
            },
        ],
        None,
    );
    std::fs::write(fit_dir.join("params.svg"), params_fig)
        .map_err(|e| CliError::Other(e.into()))?;

    let p = result.params;
    println!(
        "fit: {} iterations, converged={}, final loss {:.3e}, params a={:.4} b={:.4} c={:.4} d={:.4}",
        result.iterations,
        result.converged,
        result.loss_history.last().copied().unwrap_or(f64::NAN),
        p.a,
        p.b,
        p.c,
        p.d
    );
    Ok(())
}

fn parse_trajectory_csv(raw: &str) -> Result<Trajectory, String> {
    let mut times = Vec::new();
    let mut x = Vec::new();
    let mut e = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        if idx == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(format!("trajectory line {} needs t,x,E", idx + 1));
        }
        let parse = |s: &str| s.parse::<f64>().map_err(|_| format!("bad number {s:?}"));
        times.push(parse(fields[0])?);
        x.push(parse(fields[1])?);
        e.push(parse(fields[2])?);
    }
    Ok(Trajectory { times, x, e })
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    seed: u64,
    offline: bool,
    started_at: String,
    finished_at: String,
}

/// Entry point used by `main`; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let started_at = chrono::Utc::now().to_rfc3339();
    let command_name = match &cli.command {
        Command::Ingest(_) => "ingest",
        Command::Score => "score",
        Command::Summarize => "summarize",
        Command::Query(_) => "query",
        Command::Trend(_) => "trend",
        Command::Simulate(_) => "simulate",
        Command::Fit(_) => "fit",
    };

    let result = match &cli.command {
        Command::Ingest(args) => cmd_ingest(args, &cli.run),
        Command::Score => cmd_score(&cli.run),
        Command::Summarize => cmd_summarize(&cli.run),
        Command::Query(args) => cmd_query(args, &cli.run),
        Command::Trend(args) => cmd_trend(args, &cli.run),
        Command::Simulate(args) => cmd_simulate(args, &cli.run),
        Command::Fit(args) => cmd_fit(args, &cli.run),
    };

    // Timestamps live only in the manifest so every other artifact is
    // byte-reproducible.
    let manifest = Manifest {
        command: command_name.to_string(),
        seed: cli.run.seed,
        offline: cli.run.offline,
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339(),
    };
    if let Ok(json) = serde_json::to_string_pretty(&manifest) {
        let _ = std::fs::create_dir_all(&cli.run.output);
        let _ = std::fs::write(cli.run.output.join("manifest.json"), json);
    }

    match result {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

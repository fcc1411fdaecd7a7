//! Chat-completion client and the two-level analysis operations.
//!
//! The wire format is the ubiquitous `POST {endpoint}/chat/completions`
//! with `{model, messages[{role, content}], temperature}`; the reply is
//! read from `choices[0].message.content`, so any endpoint honoring that
//! shape works. In replay mode responses resolve from
//! `<replay_dir>/<sha256-of-request-body>.json`, making the whole pipeline
//! a pure function of its fixtures.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use opinion_pulse_core::prompt::{
    build_level1_prompt, build_level2_prompt, plan_chunks, truncate_to_tokens, Level2Task,
    SummaryEntry, CORRECTIVE_SUFFIX, DEFAULT_TOKEN_BUDGET, PROMPT_VERSION,
};
use opinion_pulse_core::reply::{parse_analysis, ReplyError};
use opinion_pulse_core::stats::site_domain;
use opinion_pulse_core::types::{DocumentAnalysis, SourceDocument};

use crate::transport::{hex_digest, LIVE_REQUEST_COUNT};

/// Client settings; `replay_dir` switches the transport to fixtures.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatConfig {
    pub endpoint: String,
    pub model_id: String,
    /// Deterministic scoring wants temperature 0.
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub max_output_tokens: Option<u32>,
    /// Input budget per level-1 call, in estimated tokens.
    #[serde(default = "default_budget")]
    pub token_budget: usize,
    #[serde(default = "default_llm_timeout")]
    pub timeout_secs: f64,
    #[serde(default)]
    pub replay_dir: Option<PathBuf>,
    /// Environment variable holding the bearer token (live mode).
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    /// Bound on concurrent level-1 calls.
    #[serde(default = "default_in_flight")]
    pub in_flight: usize,
}

fn default_budget() -> usize {
    DEFAULT_TOKEN_BUDGET
}
fn default_llm_timeout() -> f64 {
    60.0
}
fn default_key_env() -> String {
    "LLM_API_KEY".into()
}
fn default_in_flight() -> usize {
    4
}

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("chat endpoint unreachable: {reason}")]
    Transport { reason: String },
    #[error("chat endpoint returned status {status}")]
    Status { status: u16 },
    #[error("no replay fixture {fingerprint}.json for a chat request (offline mode)")]
    MissingReplay { fingerprint: String },
    #[error("chat response malformed: {reason}")]
    BadResponse { reason: String },
    #[error("reply for document {doc_id} unusable after retry: {last}")]
    MalformedAfterRetry { doc_id: String, last: ReplyError },
    #[error("nothing to analyze: no relevant analyses supplied")]
    EmptyInput,
    #[error("video and comments analyses belong to different videos ({video} vs {comments})")]
    MismatchedIds { video: String, comments: String },
}

#[derive(Debug, Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tokens: Option<u32>,
}

/// Exact wire body for one exchange; replay fingerprints hash these bytes.
fn wire_body(cfg: &ChatConfig, system_text: &str, user_text: &str) -> String {
    let request = WireRequest {
        model: &cfg.model_id,
        messages: vec![
            WireMessage {
                role: "system",
                content: system_text,
            },
            WireMessage {
                role: "user",
                content: user_text,
            },
        ],
        temperature: cfg.temperature,
        max_tokens: cfg.max_output_tokens,
    };
    serde_json::to_string(&request).expect("chat request serializes")
}

/// Replay-fixture stem for one exchange under `cfg`.
pub fn replay_fingerprint(cfg: &ChatConfig, system_text: &str, user_text: &str) -> String {
    hex_digest(wire_body(cfg, system_text, user_text).as_bytes())
}

/// Writes a canned assistant reply for one exchange in the replay format.
pub fn write_replay_fixture(
    dir: &std::path::Path,
    cfg: &ChatConfig,
    system_text: &str,
    user_text: &str,
    content: &str,
) -> std::io::Result<PathBuf> {
    let path = dir.join(format!(
        "{}.json",
        replay_fingerprint(cfg, system_text, user_text)
    ));
    let payload = serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": content}}]
    });
    std::fs::write(&path, serde_json::to_string_pretty(&payload)?)?;
    Ok(path)
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Debug, Deserialize)]
struct WireChoice {
    message: WireResponseMessage,
}

#[derive(Debug, Deserialize)]
struct WireResponseMessage {
    content: String,
}

/// Anything that can answer one (system, user) exchange. Implementations
/// must be safe for concurrent calls.
pub trait ChatApi: Send + Sync {
    fn chat(&self, system_text: &str, user_text: &str) -> Result<String, LlmError>;

    /// Identity recorded on analyses produced through this client.
    fn model_id(&self) -> &str;

    /// Number of completed calls, for chunk accounting.
    fn calls(&self) -> usize;
}

/// The production client: live HTTP or replay fixtures.
pub struct ChatClient {
    cfg: ChatConfig,
    agent: Option<ureq::Agent>,
    call_count: AtomicUsize,
}

impl ChatClient {
    pub fn new(cfg: ChatConfig) -> Self {
        let agent = if cfg.replay_dir.is_some() {
            None
        } else {
            Some(
                ureq::Agent::config_builder()
                    .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
                    .build()
                    .new_agent(),
            )
        };
        ChatClient {
            cfg,
            agent,
            call_count: AtomicUsize::new(0),
        }
    }

    pub fn config(&self) -> &ChatConfig {
        &self.cfg
    }

    pub fn is_offline(&self) -> bool {
        self.cfg.replay_dir.is_some()
    }

    fn request_body(&self, system_text: &str, user_text: &str) -> String {
        wire_body(&self.cfg, system_text, user_text)
    }

    fn content_of(raw: &str) -> Result<String, LlmError> {
        let response: WireResponse =
            serde_json::from_str(raw).map_err(|e| LlmError::BadResponse {
                reason: e.to_string(),
            })?;
        response
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| LlmError::BadResponse {
                reason: "empty choices".into(),
            })
    }
}

impl ChatApi for ChatClient {
    fn chat(&self, system_text: &str, user_text: &str) -> Result<String, LlmError> {
        let body = self.request_body(system_text, user_text);
        let raw = match (&self.cfg.replay_dir, &self.agent) {
            (Some(dir), _) => {
                let fingerprint = hex_digest(body.as_bytes());
                let path = dir.join(format!("{fingerprint}.json"));
                std::fs::read_to_string(&path)
                    .map_err(|_| LlmError::MissingReplay { fingerprint })?
            }
            (None, Some(agent)) => {
                LIVE_REQUEST_COUNT.fetch_add(1, Ordering::SeqCst);
                let url = format!("{}/chat/completions", self.cfg.endpoint);
                let mut request = agent.post(&url).header("content-type", "application/json");
                if let Ok(key) = std::env::var(&self.cfg.api_key_env) {
                    request = request.header("authorization", format!("Bearer {key}"));
                }
                let mut response = request.send(body).map_err(|e| LlmError::Transport {
                    reason: e.to_string(),
                })?;
                let status = response.status().as_u16();
                if !(200..300).contains(&status) {
                    return Err(LlmError::Status { status });
                }
                response
                    .body_mut()
                    .read_to_string()
                    .map_err(|e| LlmError::Transport {
                        reason: e.to_string(),
                    })?
            }
            (None, None) => unreachable!("live client always has an agent"),
        };
        self.call_count.fetch_add(1, Ordering::SeqCst);
        Self::content_of(&raw)
    }

    fn model_id(&self) -> &str {
        &self.cfg.model_id
    }

    fn calls(&self) -> usize {
        self.call_count.load(Ordering::SeqCst)
    }
}

/// Level-1 analysis of one document: prompt, call, parse, one corrective
/// retry on a malformed or out-of-range reply.
pub fn analyze_document(
    doc: &SourceDocument,
    client: &dyn ChatApi,
    budget_tokens: usize,
) -> Result<DocumentAnalysis, LlmError> {
    let prompt = build_level1_prompt(doc, budget_tokens);
    let stamp = |mut analysis: DocumentAnalysis, retries: u32, prompt_tokens: usize| {
        analysis.model_id = client.model_id().to_string();
        analysis.prompt_version = PROMPT_VERSION.to_string();
        analysis.retry_count = retries;
        analysis.truncated = prompt.truncated;
        analysis.prompt_tokens = prompt_tokens;
        analysis
    };
    let prompt_tokens = prompt.estimated_tokens();

    let first = client.chat(&prompt.system_text, &prompt.user_text)?;
    if let Ok(analysis) = parse_analysis(&first, &doc.id) {
        return Ok(stamp(analysis, 0, prompt_tokens));
    }
    let corrective = format!("{}{}", prompt.user_text, CORRECTIVE_SUFFIX);
    let second = client.chat(&prompt.system_text, &corrective)?;
    match parse_analysis(&second, &doc.id) {
        Ok(analysis) => Ok(stamp(analysis, 1, prompt_tokens)),
        Err(last) => Err(LlmError::MalformedAfterRetry {
            doc_id: doc.id.clone(),
            last,
        }),
    }
}

/// Builds the level-2 entry for a relevant analysis.
pub fn summary_entry(doc: &SourceDocument, analysis: &DocumentAnalysis) -> Option<SummaryEntry> {
    let scores = analysis.scores?;
    Some(SummaryEntry {
        label: site_domain(&doc.url),
        period: doc.period_label.clone(),
        summary: analysis.summary.clone(),
        scores,
    })
}

/// Outcome of the level-2 report, with chunking recorded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummarizeOutcome {
    pub report: String,
    /// Chunk passes made before the merge; 0 means a single direct call.
    pub chunk_calls: usize,
}

/// The "summary of summaries": one call when the corpus fits the budget,
/// otherwise map-reduce: each chunk summarized, then a merge pass.
pub fn summarize_summaries(
    entries: &[SummaryEntry],
    client: &dyn ChatApi,
    budget_tokens: usize,
) -> Result<SummarizeOutcome, LlmError> {
    if entries.is_empty() {
        return Err(LlmError::EmptyInput);
    }
    let task = Level2Task::Report;
    let chunks = plan_chunks(entries, &task, budget_tokens);
    if chunks.len() == 1 {
        let prompt = build_level2_prompt(entries, &task);
        let report = client.chat(&prompt.instruction_text, &prompt.render_user_text())?;
        return Ok(SummarizeOutcome {
            report,
            chunk_calls: 0,
        });
    }

    let mut partials = Vec::with_capacity(chunks.len());
    for range in &chunks {
        let prompt = build_level2_prompt(&entries[range.clone()], &task);
        let (user_text, _) = truncate_to_tokens(&prompt.render_user_text(), budget_tokens);
        partials.push(client.chat(&prompt.instruction_text, &user_text)?);
    }

    let merge_prompt = build_level2_prompt(&[], &Level2Task::Merge);
    let merged_input = partials
        .iter()
        .enumerate()
        .map(|(i, p)| format!("{}. [partial report]\n{p}", i + 1))
        .collect::<Vec<_>>()
        .join("\n\n");
    let report = client.chat(&merge_prompt.instruction_text, &merged_input)?;
    Ok(SummarizeOutcome {
        report,
        chunk_calls: chunks.len(),
    })
}

/// One cited link in a query answer and whether it resolves to the corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CitedLink {
    pub url: String,
    pub verified: bool,
}

/// Answer to a natural-language query over the corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QueryReport {
    pub text: String,
    pub cited: Vec<CitedLink>,
}

impl QueryReport {
    pub fn unverified(&self) -> usize {
        self.cited.iter().filter(|c| !c.verified).count()
    }
}

/// The exact (instruction, user text) exchange sent for a query over a
/// corpus; exposed so replay fixtures can be produced for it.
pub fn query_exchange(
    relevant: &[(&SourceDocument, &DocumentAnalysis)],
    nl_query: &str,
    budget_tokens: usize,
) -> (String, String) {
    let task = Level2Task::Query(nl_query.to_string());
    let instruction = build_level2_prompt(&[], &task).instruction_text;
    let mut user_text = String::new();
    for (idx, (doc, analysis)) in relevant.iter().enumerate() {
        let scores = analysis.scores.expect("query corpus must be scored");
        if idx > 0 {
            user_text.push_str("\n\n");
        }
        user_text.push_str(&format!(
            "{n}. [{label} | {period}] scores: nato_sentiment={s}, nato_unity={u}, article5_trust={t}\n{summary}\nlink: {url}",
            n = idx + 1,
            label = site_domain(&doc.url),
            period = doc.period_label,
            s = scores.nato_sentiment,
            u = scores.nato_unity,
            t = scores.article5_trust,
            summary = analysis.summary,
            url = doc.url,
        ));
    }
    let (user_text, _) = truncate_to_tokens(&user_text, budget_tokens);
    (instruction, user_text)
}

/// Free-form question over the collected analyses. Every link cited in the
/// reply is post-validated against the corpus; unknown links are flagged
/// as unverified rather than trusted.
pub fn answer_query(
    corpus: &[(&SourceDocument, &DocumentAnalysis)],
    nl_query: &str,
    client: &dyn ChatApi,
    budget_tokens: usize,
) -> Result<QueryReport, LlmError> {
    let relevant: Vec<(&SourceDocument, &DocumentAnalysis)> = corpus
        .iter()
        .filter(|(_, a)| a.relevant && a.scores.is_some())
        .copied()
        .collect();
    if relevant.is_empty() {
        return Err(LlmError::EmptyInput);
    }

    let (instruction, user_text) = query_exchange(&relevant, nl_query, budget_tokens);
    let text = client.chat(&instruction, &user_text)?;

    let known: std::collections::BTreeSet<&str> =
        relevant.iter().map(|(d, _)| d.url.as_str()).collect();
    let link_re = regex::Regex::new(r#"https?://[^\s<>"')\]]+"#).expect("static regex");
    let mut cited = Vec::new();
    for m in link_re.find_iter(&text) {
        let url = m.as_str().trim_end_matches(['.', ',', ';', ':']);
        cited.push(CitedLink {
            url: url.to_string(),
            verified: known.contains(url),
        });
    }
    Ok(QueryReport { text, cited })
}

/// Joint video/comments summary contrasting creator framing with audience
/// reaction; both score sets go into the prompt verbatim.
pub fn pair_summary(
    video: (&SourceDocument, &DocumentAnalysis),
    comments: (&SourceDocument, &DocumentAnalysis),
    client: &dyn ChatApi,
) -> Result<String, LlmError> {
    let id_of = |doc: &SourceDocument| doc.extra.get("video_id").cloned().unwrap_or_default();
    let (video_id, comments_id) = (id_of(video.0), id_of(comments.0));
    if video_id.is_empty() || video_id != comments_id {
        return Err(LlmError::MismatchedIds {
            video: video_id,
            comments: comments_id,
        });
    }

    let instruction = "You are given the analysis of one video and the analysis of its viewer \
                       comments, each with three opinion scores in [-5, 5] (nato_sentiment, \
                       nato_unity, article5_trust). Write a joint summary that: (1) summarizes \
                       what the video communicates, (2) summarizes the audience reaction, and \
                       (3) notes where the comments agree with or diverge from the video, \
                       including score differences.";
    let render = |tag: &str, (doc, analysis): (&SourceDocument, &DocumentAnalysis)| {
        let scores = analysis.scores.map_or_else(
            || "unscored".to_string(),
            |s| {
                format!(
                    "nato_sentiment={}, nato_unity={}, article5_trust={}",
                    s.nato_sentiment, s.nato_unity, s.article5_trust
                )
            },
        );
        format!(
            "{tag} [{title} | {period}] scores: {scores}\n{summary}",
            title = doc.extra.get("title").map_or("video", String::as_str),
            period = doc.period_label,
            summary = analysis.summary,
        )
    };
    let user_text = format!(
        "{}\n\n{}",
        render("VIDEO:", video),
        render("COMMENTS:", comments)
    );
    client.chat(instruction, &user_text)
}

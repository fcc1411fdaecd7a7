//! Prompt construction for the two-level analysis pipeline.
//!
//! Level 1 scores and summarises one document; level 2 works over the
//! collection of level-1 summaries (report, free-form question, or the
//! merge pass of map-reduce chunking). Prompts are versioned repo assets:
//! every analysis records the prompt version that produced it, and identical
//! inputs always yield identical prompt bytes.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::types::{ScoreSet, SourceDocument, SourceKind};

/// Version stamp recorded on every analysis produced with these prompts.
pub const PROMPT_VERSION: &str = "v1";

/// Output schema version declared inside level-1 prompts.
pub const SCHEMA_VERSION: &str = "1";

/// Default input budget for one level-1 call, in estimated tokens.
pub const DEFAULT_TOKEN_BUDGET: usize = 8000;

/// Crude but deterministic token count: one token per four characters,
/// rounded up. Used for truncation decisions and chunk planning only; the
/// serving model's own tokenizer is never consulted.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// Cuts `text` at a whitespace boundary so its estimated token count fits
/// `max_tokens`. Returns the (possibly shortened) text and whether a cut was
/// made.
pub fn truncate_to_tokens(text: &str, max_tokens: usize) -> (String, bool) {
    if estimate_tokens(text) <= max_tokens {
        return (text.to_string(), false);
    }
    let max_chars = max_tokens.saturating_mul(4);
    let mut cut_byte = 0usize;
    let mut last_ws_byte = 0usize;
    for (kept, (byte_idx, ch)) in text.char_indices().enumerate() {
        if kept >= max_chars {
            cut_byte = byte_idx;
            break;
        }
        if ch.is_whitespace() {
            last_ws_byte = byte_idx;
        }
    }
    let boundary = if last_ws_byte > 0 {
        last_ws_byte
    } else {
        cut_byte
    };
    (text[..boundary].trim_end().to_string(), true)
}

/// A rendered level-1 prompt: system instructions plus the document text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Level1Prompt {
    pub system_text: String,
    pub user_text: String,
    pub schema_version: String,
    /// Whether the document text was cut to fit the budget.
    pub truncated: bool,
}

impl Level1Prompt {
    pub fn estimated_tokens(&self) -> usize {
        estimate_tokens(&self.system_text) + estimate_tokens(&self.user_text)
    }
}

fn kind_noun(kind: SourceKind) -> &'static str {
    match kind {
        SourceKind::Web => "news article",
        SourceKind::YoutubeVideo => "video transcript",
        SourceKind::YoutubeComments => "batch of viewer comments on one video",
        SourceKind::RedditThread => "Reddit discussion thread",
    }
}

fn kind_hint(kind: SourceKind) -> &'static str {
    match kind {
        SourceKind::Web => {
            "Treat the text as published news or analysis; score the stance the article conveys."
        }
        SourceKind::YoutubeVideo => {
            "Treat the text as what the video itself communicates; score the creator's framing."
        }
        SourceKind::YoutubeComments => {
            "Treat the batch as one audience; score the prevailing opinion across the comments."
        }
        SourceKind::RedditThread => {
            "The text contains a post followed by its comments; score the overall thread opinion."
        }
    }
}

fn level1_system_text(kind: SourceKind) -> String {
    format!(
        "You are a news opinion analyst. You will be given a {noun} that may discuss NATO.\n\
         {hint}\n\
         \n\
         Tasks:\n\
         1. Decide whether the text is relevant to NATO, NATO unity, or NATO Article 5.\n\
         2. If relevant, summarize its key points on NATO in a short paragraph.\n\
         3. If relevant, produce three integer opinion scores in the range [-5, 5], \
         where -5 means maximally negative and 5 means maximally positive:\n\
         - nato_sentiment: overall sentiment towards NATO\n\
         - nato_unity: expressed opinion on the unity of NATO members\n\
         - article5_trust: expressed trust that Article 5 guarantees would be honored\n\
         \n\
         Reply with JSON only (schema {schema}), exactly one object:\n\
         {{\"relevant\": true, \"summary\": \"...\", \"scores\": {{\"nato_sentiment\": 0, \
         \"nato_unity\": 0, \"article5_trust\": 0}}}}\n\
         If the text is not relevant, reply {{\"relevant\": false, \"summary\": \"\"}}.",
        noun = kind_noun(kind),
        hint = kind_hint(kind),
        schema = SCHEMA_VERSION,
    )
}

/// Builds the level-1 prompt for one document.
///
/// The document text is truncated at a whitespace boundary so the whole
/// prompt fits `budget_tokens` under [`estimate_tokens`]. Truncation is not
/// an error; the flag is carried into the analysis metadata.
pub fn build_level1_prompt(doc: &SourceDocument, budget_tokens: usize) -> Level1Prompt {
    let system_text = level1_system_text(doc.source_kind);
    let system_tokens = estimate_tokens(&system_text);
    let body_budget = budget_tokens.saturating_sub(system_tokens).max(1);
    let (user_text, truncated) = truncate_to_tokens(&doc.text, body_budget);
    Level1Prompt {
        system_text,
        user_text,
        schema_version: SCHEMA_VERSION.to_string(),
        truncated,
    }
}

/// Appended to the user text when retrying after a malformed reply.
pub const CORRECTIVE_SUFFIX: &str =
    "\n\nYour previous reply was not valid. Reply again with exactly one JSON object in the \
     required schema, with integer scores in [-5, 5], and nothing else.";

/// One level-1 result as fed into level-2 prompts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryEntry {
    /// Source label, e.g. the site domain or video title.
    pub label: String,
    pub period: String,
    pub summary: String,
    pub scores: ScoreSet,
}

/// What the level-2 call is asked to do.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Level2Task {
    /// The standing "summary of summaries" report.
    Report,
    /// A natural-language question answered over the collected analyses.
    Query(String),
    /// Merge pass over chunk outputs when the corpus exceeds one prompt.
    Merge,
}

/// A rendered level-2 prompt over an ordered list of level-1 summaries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Level2Prompt {
    pub instruction_text: String,
    pub summaries: Vec<SummaryEntry>,
}

fn level2_instruction(task: &Level2Task) -> String {
    let preamble = "You are given numbered summaries of sources discussing NATO. Each entry \
                    carries a source label, a period label, and three integer opinion scores in \
                    [-5, 5] (nato_sentiment, nato_unity, article5_trust; -5 maximally negative, \
                    5 maximally positive).";
    match task {
        Level2Task::Report => format!(
            "{preamble}\n\
             Write a summary of summaries with three sections:\n\
             1. Challenges: the main challenges for NATO unity, security and Article 5 trust.\n\
             2. Time trends: how each of the three scores evolves across the period labels.\n\
             3. Groups: group the sources by their stance on NATO unity and Article 5 trust."
        ),
        Level2Task::Query(question) => format!(
            "{preamble}\n\
             Answer the following question using only the numbered entries. For every item in \
             your answer, cite the source link of the entry it came from.\n\
             Question: {question}"
        ),
        Level2Task::Merge => format!(
            "{preamble}\n\
             The numbered entries below are partial reports produced from disjoint batches of \
             sources. Merge them into a single report with the same three sections (challenges, \
             time trends, groups), without dropping any source group."
        ),
    }
}

/// Builds a level-2 prompt. Every entry appears exactly once, in input order.
pub fn build_level2_prompt(entries: &[SummaryEntry], task: &Level2Task) -> Level2Prompt {
    Level2Prompt {
        instruction_text: level2_instruction(task),
        summaries: entries.to_vec(),
    }
}

fn render_entry(idx: usize, entry: &SummaryEntry) -> String {
    format!(
        "{n}. [{label} | {period}] scores: nato_sentiment={s}, nato_unity={u}, article5_trust={t}\n{summary}",
        n = idx + 1,
        label = entry.label,
        period = entry.period,
        s = entry.scores.nato_sentiment,
        u = entry.scores.nato_unity,
        t = entry.scores.article5_trust,
        summary = entry.summary,
    )
}

impl Level2Prompt {
    /// The user-message text sent to the model.
    pub fn render_user_text(&self) -> String {
        let mut out = String::new();
        for (idx, entry) in self.summaries.iter().enumerate() {
            if idx > 0 {
                out.push_str("\n\n");
            }
            out.push_str(&render_entry(idx, entry));
        }
        out
    }

    pub fn estimated_tokens(&self) -> usize {
        estimate_tokens(&self.instruction_text) + estimate_tokens(&self.render_user_text())
    }
}

/// Splits entries into consecutive chunks whose rendered prompts each fit
/// `budget_tokens`. Greedy packing in input order; an entry too large to fit
/// even alone gets a chunk of its own (it is then truncated at send time).
/// Every input index appears in exactly one chunk.
pub fn plan_chunks(
    entries: &[SummaryEntry],
    task: &Level2Task,
    budget_tokens: usize,
) -> Vec<core::ops::Range<usize>> {
    let base = estimate_tokens(&level2_instruction(task));
    let mut chunks = Vec::new();
    let mut start = 0usize;
    let mut used = base;
    for (idx, entry) in entries.iter().enumerate() {
        let cost = estimate_tokens(&render_entry(idx, entry)) + 1;
        if idx > start && used + cost > budget_tokens {
            chunks.push(start..idx);
            start = idx;
            used = base;
        }
        used += cost;
    }
    if start < entries.len() {
        chunks.push(start..entries.len());
    }
    chunks
}

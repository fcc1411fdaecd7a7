//! Source connectors: web search + page extraction, YouTube, Reddit.
//!
//! Every connector speaks to its backend through [`Transport`], so setting
//! `fixture_dir` turns the whole ingest layer into a pure function of the
//! canned responses. Request fingerprints never include API keys.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use opinion_pulse_core::types::{DocumentError, SourceDocument, SourceKind};

use crate::extract::{html_to_text, ExtractError};
use crate::transport::{
    parallel_map_ordered, ApiRequest, Clock, Fetcher, FixtureTransport, HttpTransport, RateLimiter,
    RealClock, Transport, TransportError,
};

/// Timestamp stamped on documents in fixture mode, so stores are
/// byte-identical across runs.
pub const OFFLINE_RETRIEVED_AT: &str = "2025-04-10T00:00:00Z";

/// How a live API key rides on requests. Keys never enter request
/// fingerprints either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthStyle {
    /// `key=<value>` query parameter (search-API convention).
    #[default]
    KeyParam,
    /// `Authorization: Bearer <value>` header.
    Bearer,
}

/// Connection settings for one backend.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConnectorConfig {
    pub endpoint_base: String,
    /// Environment variable holding the API key (live mode only).
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub auth_style: AuthStyle,
    /// Requests per second per host.
    #[serde(default = "default_rate_limit")]
    pub rate_limit: f64,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    /// Offline mode: resolve responses from this directory, never the net.
    #[serde(default)]
    pub fixture_dir: Option<PathBuf>,
    /// Parallel in-flight requests for bulk fetches.
    #[serde(default = "default_parallel")]
    pub parallel_fetches: usize,
}

fn default_rate_limit() -> f64 {
    4.0
}
fn default_timeout() -> f64 {
    10.0
}
fn default_parallel() -> usize {
    4
}

impl ConnectorConfig {
    pub fn offline(endpoint_base: impl Into<String>, fixture_dir: impl Into<PathBuf>) -> Self {
        ConnectorConfig {
            endpoint_base: endpoint_base.into(),
            api_key_env: None,
            auth_style: AuthStyle::default(),
            rate_limit: default_rate_limit(),
            timeout_secs: default_timeout(),
            fixture_dir: Some(fixture_dir.into()),
            parallel_fetches: default_parallel(),
        }
    }

    pub fn is_offline(&self) -> bool {
        self.fixture_dir.is_some()
    }
}

/// One search request: a query restricted to an annual period.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchSpec {
    pub query: String,
    pub period_label: String,
    pub max_results: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum ConnectorError {
    #[error("authorization rejected by {url}")]
    Auth { url: String },
    #[error("rate limited by {url}, retry after {retry_after:?}")]
    RateLimited {
        url: String,
        retry_after: Option<Duration>,
    },
    #[error("backend error {status} from {url}")]
    Backend { status: u16, url: String },
    #[error("fetch failed with status {status} for {url}")]
    Fetch { status: u16, url: String },
    #[error("page {url} produced no text")]
    ExtractionEmpty { url: String },
    #[error("no transcript for video {video_id}")]
    NoTranscript { video_id: String },
    #[error("search spec invalid: {0}")]
    BadSpec(&'static str),
    #[error("unexpected backend payload from {url}: {reason}")]
    BadPayload { url: String, reason: String },
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Document(#[from] DocumentError),
}

/// Maps a transport failure on an API call to the connector vocabulary.
fn api_error(err: TransportError) -> ConnectorError {
    match err.status() {
        Some(401) | Some(403) => ConnectorError::Auth { url: url_of(&err) },
        Some(429) => ConnectorError::RateLimited {
            url: url_of(&err),
            retry_after: None,
        },
        Some(status) => ConnectorError::Backend {
            status,
            url: url_of(&err),
        },
        None => ConnectorError::Transport(err),
    }
}

fn url_of(err: &TransportError) -> String {
    match err {
        TransportError::Status { url, .. }
        | TransportError::Timeout { url }
        | TransportError::Network { url, .. }
        | TransportError::MissingFixture { url, .. } => url.clone(),
        TransportError::BadFixture { path, .. } => path.display().to_string(),
    }
}

/// A search hit tagged with its originating query, period and rank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedUrl {
    pub url: String,
    pub query: String,
    pub period_label: String,
    pub rank: usize,
}

/// Date range (YYYYMMDD bounds) covered by a period label.
///
/// Annual labels map to whole calendar years except `2025`, which runs
/// January 1 to April 10 (the collection cutoff of the reference corpus).
/// Explicit `YYYY-MM-DD..YYYY-MM-DD` ranges pass through.
pub fn period_range(label: &str) -> Result<(String, String), ConnectorError> {
    if let Some((start, end)) = label.split_once("..") {
        let pack = |s: &str| s.replace('-', "");
        let (s, e) = (pack(start.trim()), pack(end.trim()));
        if s.len() == 8 && e.len() == 8 && s.chars().all(|c| c.is_ascii_digit()) {
            return Ok((s, e));
        }
        return Err(ConnectorError::BadSpec("malformed ISO date range"));
    }
    if label.len() == 4 && label.chars().all(|c| c.is_ascii_digit()) {
        if label == "2025" {
            return Ok(("20250101".into(), "20250410".into()));
        }
        return Ok((format!("{label}0101"), format!("{label}1231")));
    }
    Err(ConnectorError::BadSpec(
        "period label must be a year or ISO range",
    ))
}

/// A connector bound to one backend plus the machinery to reach it.
pub struct Connector {
    cfg: ConnectorConfig,
    fetcher: Fetcher,
}

impl Connector {
    pub fn new(cfg: ConnectorConfig, clock: Arc<dyn Clock>) -> Self {
        let transport: Arc<dyn Transport> = match &cfg.fixture_dir {
            Some(dir) => Arc::new(FixtureTransport::new(dir)),
            None => {
                let mut http = HttpTransport::new(Duration::from_secs_f64(cfg.timeout_secs));
                if let Some(env_name) = &cfg.api_key_env {
                    if let Ok(key) = std::env::var(env_name) {
                        http = match cfg.auth_style {
                            AuthStyle::KeyParam => http.with_key_param("key", key),
                            AuthStyle::Bearer => http.with_bearer(key),
                        };
                    }
                }
                Arc::new(http)
            }
        };
        let limiter = Arc::new(RateLimiter::new(cfg.rate_limit, clock));
        Connector {
            cfg,
            fetcher: Fetcher { transport, limiter },
        }
    }

    pub fn with_default_clock(cfg: ConnectorConfig) -> Self {
        Self::new(cfg, Arc::new(RealClock::new()))
    }

    pub fn is_offline(&self) -> bool {
        self.cfg.is_offline()
    }

    fn retrieved_at(&self) -> String {
        if self.is_offline() {
            OFFLINE_RETRIEVED_AT.to_string()
        } else {
            chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
        }
    }

    fn get_json(&self, request: &ApiRequest) -> Result<Value, ConnectorError> {
        let body = self.fetcher.fetch(request).map_err(api_error)?;
        serde_json::from_str(&body).map_err(|e| ConnectorError::BadPayload {
            url: request.url.clone(),
            reason: e.to_string(),
        })
    }

    /// Ranked result URLs for one (query, period), deduplicated with
    /// backend order preserved. Pages through the search API ten hits at a
    /// time until `max_results` URLs are collected or results run out.
    pub fn search_resources(&self, spec: &SearchSpec) -> Result<SearchOutcome, ConnectorError> {
        if spec.query.trim().is_empty() {
            return Err(ConnectorError::BadSpec("query must be non-empty"));
        }
        if spec.max_results < 1 {
            return Err(ConnectorError::BadSpec("max_results must be >= 1"));
        }
        let (from, to) = period_range(&spec.period_label)?;
        let url = format!("{}/customsearch/v1", self.cfg.endpoint_base);

        let mut seen = BTreeSet::new();
        let mut urls = Vec::new();
        let mut requests = 0usize;
        let mut start = 1usize;
        // Paging consumes ranked backend positions; duplicates count
        // against the quota rather than triggering extra pages.
        let mut raw_seen = 0usize;
        while raw_seen < spec.max_results {
            let page_size = (spec.max_results - raw_seen).min(10);
            let request = ApiRequest::get(&url)
                .param("q", &spec.query)
                .param("num", page_size.to_string())
                .param("start", start.to_string())
                .param("sort", format!("date:r:{from}:{to}"));
            let payload = self.get_json(&request)?;
            requests += 1;
            let items = payload
                .get("items")
                .and_then(Value::as_array)
                .cloned()
                .unwrap_or_default();
            let got = items.len();
            raw_seen += got;
            for item in items {
                if urls.len() >= spec.max_results {
                    break;
                }
                let Some(link) = item.get("link").and_then(Value::as_str) else {
                    continue;
                };
                if seen.insert(link.to_string()) {
                    urls.push(TaggedUrl {
                        url: link.to_string(),
                        query: spec.query.clone(),
                        period_label: spec.period_label.clone(),
                        rank: urls.len() + 1,
                    });
                }
            }
            if got < page_size {
                break; // backend exhausted
            }
            start += got;
        }
        Ok(SearchOutcome { urls, requests })
    }

    /// Fetches one page and extracts its visible text.
    pub fn fetch_web_document(&self, tagged: &TaggedUrl) -> Result<SourceDocument, ConnectorError> {
        let request = ApiRequest::get(&tagged.url).html();
        let html = self.fetcher.fetch(&request).map_err(|e| match e.status() {
            Some(status) => ConnectorError::Fetch {
                status,
                url: tagged.url.clone(),
            },
            None => ConnectorError::Transport(e),
        })?;
        let text =
            html_to_text(&html).map_err(|ExtractError::Empty| ConnectorError::ExtractionEmpty {
                url: tagged.url.clone(),
            })?;
        let mut extra = BTreeMap::new();
        extra.insert("rank".to_string(), tagged.rank.to_string());
        Ok(SourceDocument::new(
            SourceKind::Web,
            tagged.url.clone(),
            tagged.query.clone(),
            tagged.period_label.clone(),
            self.retrieved_at(),
            text,
            extra,
        )?)
    }

    /// Bulk page fetch with bounded parallelism; result order follows the
    /// input order regardless of completion order.
    pub fn fetch_web_documents(
        &self,
        tagged: &[TaggedUrl],
    ) -> Vec<(TaggedUrl, Result<SourceDocument, ConnectorError>)> {
        let jobs: Vec<TaggedUrl> = tagged.to_vec();
        parallel_map_ordered(jobs, self.cfg.parallel_fetches, |t| {
            let doc = self.fetch_web_document(&t);
            (t, doc)
        })
    }

    /// Videos matching `query` in `period` with at least `min_views` views,
    /// as (transcript document, optional comments document) pairs. Videos
    /// without transcripts are skipped and reported.
    pub fn fetch_youtube(
        &self,
        query: &str,
        min_views: u64,
        period_label: &str,
    ) -> Result<YoutubeBatch, ConnectorError> {
        let (from, to) = period_range(period_label)?;
        let date = |packed: &str, tail: &str| {
            format!(
                "{}-{}-{}T{tail}",
                &packed[..4],
                &packed[4..6],
                &packed[6..8]
            )
        };
        let search = ApiRequest::get(format!("{}/youtube/v3/search", self.cfg.endpoint_base))
            .param("part", "snippet")
            .param("type", "video")
            .param("q", query)
            .param("publishedAfter", date(&from, "00:00:00Z"))
            .param("publishedBefore", date(&to, "23:59:59Z"))
            .param("maxResults", "25");
        let payload = self.get_json(&search)?;
        let items = payload
            .get("items")
            .and_then(Value::as_array)
            .cloned()
            .unwrap_or_default();

        let mut batch = YoutubeBatch::default();
        for item in &items {
            let Some(video_id) = item.pointer("/id/videoId").and_then(Value::as_str) else {
                continue;
            };
            let title = item
                .pointer("/snippet/title")
                .and_then(Value::as_str)
                .unwrap_or("")
                .to_string();
            batch.considered += 1;

            let stats = ApiRequest::get(format!("{}/youtube/v3/videos", self.cfg.endpoint_base))
                .param("part", "statistics")
                .param("id", video_id);
            let stats_payload = self.get_json(&stats)?;
            let views: u64 = stats_payload
                .pointer("/items/0/statistics/viewCount")
                .and_then(Value::as_str)
                .and_then(|s| s.parse().ok())
                .unwrap_or(0);
            if views < min_views {
                batch.below_threshold += 1;
                continue;
            }

            let transcript =
                ApiRequest::get(format!("{}/youtube/transcript", self.cfg.endpoint_base))
                    .param("videoId", video_id);
            let transcript_text = match self.get_json(&transcript) {
                Ok(v) => v
                    .get("text")
                    .and_then(Value::as_str)
                    .unwrap_or("")
                    .to_string(),
                Err(ConnectorError::Backend { status: 404, .. }) => {
                    batch.skipped.push(ConnectorError::NoTranscript {
                        video_id: video_id.to_string(),
                    });
                    continue;
                }
                Err(other) => return Err(other),
            };
            if transcript_text.trim().is_empty() {
                batch.skipped.push(ConnectorError::NoTranscript {
                    video_id: video_id.to_string(),
                });
                continue;
            }

            let comments_req = ApiRequest::get(format!(
                "{}/youtube/v3/commentThreads",
                self.cfg.endpoint_base
            ))
            .param("part", "snippet")
            .param("videoId", video_id)
            .param("maxResults", "100");
            let comments_payload = self.get_json(&comments_req)?;
            let comments: Vec<String> = comments_payload
                .get("items")
                .and_then(Value::as_array)
                .map(|arr| {
                    arr.iter()
                        .filter_map(|c| {
                            c.pointer("/snippet/topLevelComment/snippet/textDisplay")
                                .and_then(Value::as_str)
                                .map(str::to_string)
                        })
                        .collect()
                })
                .unwrap_or_default();

            let video_url = format!("https://www.youtube.com/watch?v={video_id}");
            let mut extra = BTreeMap::new();
            extra.insert("video_id".to_string(), video_id.to_string());
            extra.insert("title".to_string(), title.clone());
            extra.insert("view_count".to_string(), views.to_string());

            let video_doc = SourceDocument::new(
                SourceKind::YoutubeVideo,
                video_url.clone(),
                query.to_string(),
                period_label.to_string(),
                self.retrieved_at(),
                transcript_text,
                extra.clone(),
            )?;

            // Zero comments: the empty-text rule forbids an empty document,
            // so only the transcript is emitted.
            let comments_doc = if comments.is_empty() {
                None
            } else {
                extra.insert("comment_count".to_string(), comments.len().to_string());
                Some(SourceDocument::new(
                    SourceKind::YoutubeComments,
                    video_url,
                    query.to_string(),
                    period_label.to_string(),
                    self.retrieved_at(),
                    comments.join("\n\n"),
                    extra,
                )?)
            };
            batch.pairs.push((video_doc, comments_doc));
        }
        Ok(batch)
    }

    /// Reddit threads matching `query`, each flattened into one document:
    /// post title, body (when present) and comments in thread order.
    pub fn fetch_reddit(
        &self,
        query: &str,
        limit: usize,
        period_label: &str,
    ) -> Result<Vec<SourceDocument>, ConnectorError> {
        if limit < 1 {
            return Err(ConnectorError::BadSpec("limit must be >= 1"));
        }
        let search = ApiRequest::get(format!("{}/search.json", self.cfg.endpoint_base))
            .param("q", query)
            .param("limit", limit.to_string())
            .param("sort", "new")
            .param("t", "year");
        let payload = self.get_json(&search)?;
        let children = payload
            .pointer("/data/children")
            .and_then(Value::as_array)
            .cloned()
            .unwrap_or_default();

        let mut docs = Vec::new();
        for child in children.iter().take(limit) {
            let data = &child["data"];
            let Some(id) = data.get("id").and_then(Value::as_str) else {
                continue;
            };
            let title = data.get("title").and_then(Value::as_str).unwrap_or("");
            let body = data.get("selftext").and_then(Value::as_str).unwrap_or("");
            let permalink = data
                .get("permalink")
                .and_then(Value::as_str)
                .map(str::to_string)
                .unwrap_or_else(|| format!("/comments/{id}"));

            let comments_req =
                ApiRequest::get(format!("{}/comments/{id}.json", self.cfg.endpoint_base))
                    .param("limit", "100");
            let comments_payload = self.get_json(&comments_req)?;
            let comments: Vec<String> = comments_payload
                .pointer("/data/children")
                .and_then(Value::as_array)
                .map(|arr| {
                    arr.iter()
                        .filter_map(|c| {
                            c.pointer("/data/body")
                                .and_then(Value::as_str)
                                .map(str::to_string)
                        })
                        .collect()
                })
                .unwrap_or_default();

            let mut parts = vec![title.to_string()];
            if !body.trim().is_empty() {
                parts.push(body.to_string());
            }
            parts.extend(comments.iter().cloned());
            let text = parts.join("\n\n");

            let mut extra = BTreeMap::new();
            extra.insert("thread_id".to_string(), id.to_string());
            extra.insert("comment_count".to_string(), comments.len().to_string());
            docs.push(SourceDocument::new(
                SourceKind::RedditThread,
                format!("https://www.reddit.com{permalink}"),
                query.to_string(),
                period_label.to_string(),
                self.retrieved_at(),
                text,
                extra,
            )?);
        }
        Ok(docs)
    }
}

/// Result of one search sweep: ranked URLs plus the backend calls made.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub urls: Vec<TaggedUrl>,
    pub requests: usize,
}

/// Output of one YouTube sweep.
#[derive(Default)]
pub struct YoutubeBatch {
    /// (transcript document, comments document when any comments exist).
    pub pairs: Vec<(SourceDocument, Option<SourceDocument>)>,
    pub considered: usize,
    pub below_threshold: usize,
    pub skipped: Vec<ConnectorError>,
}

//! Shared domain types: source documents, opinion scores and trend series.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Lower bound of the opinion score scale (maximally negative).
pub const SCORE_MIN: i64 = -5;
/// Upper bound of the opinion score scale (maximally positive).
pub const SCORE_MAX: i64 = 5;

/// Where a document came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Web,
    YoutubeVideo,
    YoutubeComments,
    RedditThread,
}

impl SourceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::Web => "web",
            SourceKind::YoutubeVideo => "youtube_video",
            SourceKind::YoutubeComments => "youtube_comments",
            SourceKind::RedditThread => "reddit_thread",
        }
    }
}

/// The three scored opinion dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Sentiment,
    Unity,
    Article5,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 3] = [ScoreKind::Sentiment, ScoreKind::Unity, ScoreKind::Article5];

    pub fn as_str(self) -> &'static str {
        match self {
            ScoreKind::Sentiment => "sentiment",
            ScoreKind::Unity => "unity",
            ScoreKind::Article5 => "article5",
        }
    }
}

/// Errors from score validation.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScoreError {
    /// A score fell outside the declared `[-5, 5]` scale. The offending
    /// dimension and raw value are reported so the caller can retry the
    /// analysis or record the failure; nothing is clamped.
    #[error("score {name} = {value} is outside [{SCORE_MIN}, {SCORE_MAX}]")]
    OutOfRange { name: &'static str, value: i64 },
}

/// The three integer opinion scores of one analysed document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub nato_sentiment: i32,
    pub nato_unity: i32,
    pub article5_trust: i32,
}

impl ScoreSet {
    pub fn get(&self, kind: ScoreKind) -> i32 {
        match kind {
            ScoreKind::Sentiment => self.nato_sentiment,
            ScoreKind::Unity => self.nato_unity,
            ScoreKind::Article5 => self.article5_trust,
        }
    }
}

/// Validates a raw score triple against the `[-5, 5]` integer scale.
///
/// Out-of-range values are an error, not clamped: a malformed model reply
/// must surface instead of silently biasing downstream trend fits.
pub fn validate_scores(raw: (i64, i64, i64)) -> Result<ScoreSet, ScoreError> {
    let check = |name: &'static str, value: i64| -> Result<i32, ScoreError> {
        if (SCORE_MIN..=SCORE_MAX).contains(&value) {
            Ok(value as i32)
        } else {
            Err(ScoreError::OutOfRange { name, value })
        }
    };
    Ok(ScoreSet {
        nato_sentiment: check("nato_sentiment", raw.0)?,
        nato_unity: check("nato_unity", raw.1)?,
        article5_trust: check("article5_trust", raw.2)?,
    })
}

/// One ingested text unit: a web page, a video transcript, a batch of video
/// comments, or a Reddit thread.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDocument {
    /// Deterministic id, a function of `(url, source_kind, period_label)`.
    pub id: String,
    pub source_kind: SourceKind,
    pub url: String,
    /// The search query that found this document.
    pub query: String,
    /// Annual label ("2021".."2025") or an ISO date range.
    pub period_label: String,
    /// RFC 3339 UTC timestamp of retrieval. Pinned in fixture mode so stores
    /// are byte-identical across runs.
    pub retrieved_at: String,
    pub text: String,
    /// Connector-specific metadata, e.g. `view_count`, `comment_count`.
    pub extra: BTreeMap<String, String>,
}

/// Error constructing a document.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DocumentError {
    /// Documents with empty extracted text are never emitted; an empty
    /// extraction is a fetch-side failure, not a valid document.
    #[error("document text is empty for {url}")]
    EmptyText { url: String },
}

impl SourceDocument {
    /// Builds a document, enforcing the non-empty-text invariant and
    /// deriving the deterministic id.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        source_kind: SourceKind,
        url: String,
        query: String,
        period_label: String,
        retrieved_at: String,
        text: String,
        extra: BTreeMap<String, String>,
    ) -> Result<Self, DocumentError> {
        if text.trim().is_empty() {
            return Err(DocumentError::EmptyText { url });
        }
        let id = Self::compute_id(&url, source_kind, &period_label);
        Ok(SourceDocument {
            id,
            source_kind,
            url,
            query,
            period_label,
            retrieved_at,
            text,
            extra,
        })
    }

    /// Stable id: truncated SHA-256 of `(url, source_kind, period_label)`.
    pub fn compute_id(url: &str, kind: SourceKind, period_label: &str) -> String {
        let mut hasher = Sha256::new();
        hasher.update(url.as_bytes());
        hasher.update(b"\n");
        hasher.update(kind.as_str().as_bytes());
        hasher.update(b"\n");
        hasher.update(period_label.as_bytes());
        let digest = hasher.finalize();
        let mut out = String::with_capacity(32);
        for byte in digest.iter().take(16) {
            push_hex(&mut out, *byte);
        }
        out
    }
}

fn push_hex(out: &mut String, byte: u8) {
    const HEX: &[u8; 16] = b"0123456789abcdef";
    out.push(HEX[(byte >> 4) as usize] as char);
    out.push(HEX[(byte & 0xf) as usize] as char);
}

/// Level-1 model output for one document.
///
/// `scores` is present exactly when `relevant` is true.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentAnalysis {
    pub doc_id: String,
    pub relevant: bool,
    pub summary: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<ScoreSet>,
    pub model_id: String,
    pub prompt_version: String,
    /// How many corrective retries were needed to obtain a parseable reply.
    #[serde(default)]
    pub retry_count: u32,
    /// Whether the document text was truncated to fit the prompt budget.
    #[serde(default)]
    pub truncated: bool,
    /// Estimated prompt size in tokens.
    #[serde(default)]
    pub prompt_tokens: usize,
}

impl DocumentAnalysis {
    /// Checks the relevance/scores consistency invariant.
    pub fn is_consistent(&self) -> bool {
        self.relevant == self.scores.is_some()
    }
}

/// A score time series for one (label, score kind) pair, e.g. one news site.
///
/// Points are `(t, score)` with `t` a period index starting at 1; multiple
/// points may share the same `t` (many documents per site-year).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendSeries {
    pub label: String,
    pub score_kind: ScoreKind,
    pub points: Vec<(u32, f64)>,
}

/// Errors from trend-series validation.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SeriesError {
    #[error("trend series needs at least 2 points with 2 distinct t values, got {points} points over {distinct} t")]
    TooFewPoints { points: usize, distinct: usize },
    #[error("trend series points must be sorted by t and have t >= 1")]
    Unsorted,
}

impl TrendSeries {
    /// Validates ordering and the two-distinct-periods regression minimum.
    pub fn validate(&self) -> Result<(), SeriesError> {
        let mut distinct = 0usize;
        let mut prev: Option<u32> = None;
        for &(t, _) in &self.points {
            if t < 1 {
                return Err(SeriesError::Unsorted);
            }
            match prev {
                Some(p) if t < p => return Err(SeriesError::Unsorted),
                Some(p) if t == p => {}
                _ => distinct += 1,
            }
            prev = Some(t);
        }
        if self.points.len() < 2 || distinct < 2 {
            return Err(SeriesError::TooFewPoints {
                points: self.points.len(),
                distinct,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use proptest::prelude::*;

    #[test]
    fn validate_scores_passthrough() {
        assert_eq!(
            validate_scores((3, 2, -1)).unwrap(),
            ScoreSet {
                nato_sentiment: 3,
                nato_unity: 2,
                article5_trust: -1
            }
        );
    }

    #[test]
    fn validate_scores_boundaries() {
        assert_eq!(
            validate_scores((-5, 5, 0)).unwrap(),
            ScoreSet {
                nato_sentiment: -5,
                nato_unity: 5,
                article5_trust: 0
            }
        );
    }

    #[test]
    fn validate_scores_rejects_above_range() {
        assert_eq!(
            validate_scores((6, 0, 0)),
            Err(ScoreError::OutOfRange {
                name: "nato_sentiment",
                value: 6
            })
        );
    }

    #[test]
    fn doc_id_deterministic_and_distinct() {
        let a = SourceDocument::compute_id("https://x.test/a", SourceKind::Web, "2021");
        let b = SourceDocument::compute_id("https://x.test/a", SourceKind::Web, "2021");
        let c = SourceDocument::compute_id("https://x.test/a", SourceKind::Web, "2022");
        let d = SourceDocument::compute_id("https://x.test/a", SourceKind::YoutubeVideo, "2021");
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
        assert_eq!(a.len(), 32);
    }

    #[test]
    fn empty_text_rejected() {
        let err = SourceDocument::new(
            SourceKind::Web,
            "https://x.test".to_string(),
            "q".to_string(),
            "2021".to_string(),
            "2025-04-10T00:00:00Z".to_string(),
            "  \n ".to_string(),
            BTreeMap::new(),
        )
        .unwrap_err();
        assert!(matches!(err, DocumentError::EmptyText { .. }));
    }

    #[test]
    fn series_validation() {
        let mut s = TrendSeries {
            label: "cnn.com".to_string(),
            score_kind: ScoreKind::Unity,
            points: alloc::vec![(1, 2.0), (1, 3.0), (2, 1.0)],
        };
        assert!(s.validate().is_ok());
        s.points = alloc::vec![(1, 2.0), (1, 3.0)];
        assert!(matches!(
            s.validate(),
            Err(SeriesError::TooFewPoints { distinct: 1, .. })
        ));
        s.points = alloc::vec![(2, 2.0), (1, 3.0)];
        assert_eq!(s.validate(), Err(SeriesError::Unsorted));
    }

    proptest! {
        // The validator accepts exactly the integer cube [-5,5]^3.
        #[test]
        fn score_cube_is_exact(a in -12i64..=12, b in -12i64..=12, c in -12i64..=12) {
            let inside = (-5..=5).contains(&a) && (-5..=5).contains(&b) && (-5..=5).contains(&c);
            prop_assert_eq!(validate_scores((a, b, c)).is_ok(), inside);
        }

        #[test]
        fn analysis_roundtrip(
            relevant in proptest::bool::ANY,
            summary in ".{0,60}",
            a in -5i64..=5, b in -5i64..=5, c in -5i64..=5,
            retries in 0u32..3,
        ) {
            let analysis = DocumentAnalysis {
                doc_id: "d".to_string(),
                relevant,
                summary,
                scores: relevant.then(|| validate_scores((a, b, c)).unwrap()),
                model_id: "m".to_string(),
                prompt_version: "v1".to_string(),
                retry_count: retries,
                truncated: false,
                prompt_tokens: 42,
            };
            let encoded = serde_json::to_string(&analysis).unwrap();
            let decoded: DocumentAnalysis = serde_json::from_str(&encoded).unwrap();
            prop_assert_eq!(analysis, decoded);
        }

        #[test]
        fn document_roundtrip(url in "[a-z]{3,12}", period in "[0-9]{4}", text in ".{1,80}") {
            prop_assume!(!text.trim().is_empty());
            let mut extra = BTreeMap::new();
            extra.insert("view_count".to_string(), "500001".to_string());
            let doc = SourceDocument::new(
                SourceKind::YoutubeVideo,
                alloc::format!("https://{url}.test/v"),
                "q".to_string(),
                period,
                "2025-04-10T00:00:00Z".to_string(),
                text,
                extra,
            ).unwrap();
            let encoded = serde_json::to_string(&doc).unwrap();
            let decoded: SourceDocument = serde_json::from_str(&encoded).unwrap();
            prop_assert_eq!(doc, decoded);
        }
    }
}

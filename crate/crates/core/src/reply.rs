//! Parsing and validation of level-1 model replies.
//!
//! Replies are required to be a single JSON object, but models wrap output
//! in code fences often enough that the parser strips them before the strict
//! parse. Parsing is total: arbitrary bytes yield `Malformed`, never a panic.

use alloc::string::{String, ToString};

use serde_json::Value;

use crate::types::{validate_scores, DocumentAnalysis, ScoreError};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReplyError {
    /// Not JSON, not an object, or missing/mistyped required fields.
    #[error("malformed reply: {0}")]
    Malformed(String),
    /// Structurally valid but scores violate the integer [-5, 5] contract.
    #[error(transparent)]
    OutOfRange(#[from] ScoreError),
}

/// Removes a surrounding Markdown code fence (``` or ```json) if present.
fn strip_code_fence(text: &str) -> &str {
    let trimmed = text.trim();
    let Some(rest) = trimmed.strip_prefix("```") else {
        return trimmed;
    };
    let Some(body) = rest.strip_suffix("```") else {
        return trimmed;
    };
    // Drop an optional language tag on the opening fence line.
    match body.find('\n') {
        Some(nl) if body[..nl].trim().chars().all(|c| c.is_ascii_alphanumeric()) => {
            body[nl + 1..].trim()
        }
        _ => body.trim(),
    }
}

fn integer_field(scores: &Value, name: &'static str) -> Result<i64, ReplyError> {
    let field = scores
        .get(name)
        .ok_or_else(|| ReplyError::Malformed(alloc::format!("missing score {name}")))?;
    // Non-integer scores are rejected, not rounded; rounding would hide
    // prompt drift.
    field
        .as_i64()
        .ok_or_else(|| ReplyError::Malformed(alloc::format!("score {name} is not an integer")))
}

/// Parses one level-1 reply into a [`DocumentAnalysis`].
///
/// The caller stamps `model_id` and `prompt_version` afterwards; this
/// function only knows the reply text and the document id.
pub fn parse_analysis(reply_text: &str, doc_id: &str) -> Result<DocumentAnalysis, ReplyError> {
    let body = strip_code_fence(reply_text);
    let value: Value = serde_json::from_str(body)
        .map_err(|e| ReplyError::Malformed(alloc::format!("not valid JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| ReplyError::Malformed("reply is not a JSON object".to_string()))?;

    let relevant = obj
        .get("relevant")
        .and_then(Value::as_bool)
        .ok_or_else(|| ReplyError::Malformed("missing boolean field `relevant`".to_string()))?;

    let summary = obj
        .get("summary")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();

    let scores = if relevant {
        let scores_value = obj
            .get("scores")
            .ok_or_else(|| ReplyError::Malformed("relevant reply without `scores`".to_string()))?;
        if summary.is_empty() {
            return Err(ReplyError::Malformed(
                "relevant reply without `summary`".to_string(),
            ));
        }
        let raw = (
            integer_field(scores_value, "nato_sentiment")?,
            integer_field(scores_value, "nato_unity")?,
            integer_field(scores_value, "article5_trust")?,
        );
        Some(validate_scores(raw)?)
    } else {
        None
    };

    Ok(DocumentAnalysis {
        doc_id: doc_id.to_string(),
        relevant,
        summary,
        scores,
        model_id: String::new(),
        prompt_version: String::new(),
        retry_count: 0,
        truncated: false,
        prompt_tokens: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const VALID: &str = r#"{"relevant":true,"summary":"s","scores":{"nato_sentiment":1,"nato_unity":0,"article5_trust":-2}}"#;

    #[test]
    fn parses_valid_reply() {
        let analysis = parse_analysis(VALID, "doc1").unwrap();
        assert!(analysis.relevant);
        assert_eq!(analysis.doc_id, "doc1");
        let scores = analysis.scores.unwrap();
        assert_eq!(scores.nato_sentiment, 1);
        assert_eq!(scores.nato_unity, 0);
        assert_eq!(scores.article5_trust, -2);
        assert!(analysis.is_consistent());
    }

    #[test]
    fn fenced_reply_parses_identically() {
        let fenced = alloc::format!("```json\n{VALID}\n```");
        assert_eq!(
            parse_analysis(&fenced, "doc1").unwrap(),
            parse_analysis(VALID, "doc1").unwrap()
        );
        let bare_fence = alloc::format!("```\n{VALID}\n```");
        assert_eq!(
            parse_analysis(&bare_fence, "doc1").unwrap(),
            parse_analysis(VALID, "doc1").unwrap()
        );
    }

    #[test]
    fn out_of_range_score_propagates() {
        let reply = r#"{"relevant":true,"summary":"s","scores":{"nato_sentiment":9,"nato_unity":0,"article5_trust":0}}"#;
        assert!(matches!(
            parse_analysis(reply, "d"),
            Err(ReplyError::OutOfRange(ScoreError::OutOfRange {
                name: "nato_sentiment",
                value: 9
            }))
        ));
    }

    #[test]
    fn non_integer_score_is_malformed() {
        let reply = r#"{"relevant":true,"summary":"s","scores":{"nato_sentiment":1.5,"nato_unity":0,"article5_trust":0}}"#;
        assert!(matches!(
            parse_analysis(reply, "d"),
            Err(ReplyError::Malformed(_))
        ));
    }

    #[test]
    fn irrelevant_reply_has_no_scores() {
        let analysis = parse_analysis(r#"{"relevant":false,"summary":""}"#, "d").unwrap();
        assert!(!analysis.relevant);
        assert!(analysis.scores.is_none());
        assert!(analysis.is_consistent());
    }

    #[test]
    fn garbage_is_malformed_not_panic() {
        for junk in [
            "",
            "not json",
            "[1,2,3]",
            "{\"relevant\":\"yes\"}",
            "```{```",
        ] {
            assert!(matches!(
                parse_analysis(junk, "d"),
                Err(ReplyError::Malformed(_))
            ));
        }
    }

    proptest! {
        // Totality: arbitrary bytes never crash the parser.
        #[test]
        fn fuzz_never_panics(input in ".*") {
            let _ = parse_analysis(&input, "doc");
        }

        // Valid JSON with in-range integers always parses; the full integer
        // cube [-5,5]^3 is accepted and a band outside it is rejected.
        #[test]
        fn score_cube_via_reply(a in -8i64..=8, b in -8i64..=8, c in -8i64..=8) {
            let reply = alloc::format!(
                r#"{{"relevant":true,"summary":"s","scores":{{"nato_sentiment":{a},"nato_unity":{b},"article5_trust":{c}}}}}"#
            );
            let inside = (-5..=5).contains(&a) && (-5..=5).contains(&b) && (-5..=5).contains(&c);
            match parse_analysis(&reply, "d") {
                Ok(analysis) => prop_assert!(inside && analysis.scores.is_some()),
                Err(ReplyError::OutOfRange(_)) => prop_assert!(!inside),
                Err(other) => prop_assert!(false, "unexpected error {other:?}"),
            }
        }
    }
}

//! Grouped descriptive statistics over analysed documents.
//!
//! These feed the mean-score tables and box plots: one stats row per
//! (group, score kind), grouped by source kind, site domain or period.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::types::{DocumentAnalysis, ScoreKind, SourceDocument};
use crate::util::{quantile_sorted, sorted_copy};

/// Grouping key for score aggregation. These are exactly the groupings
/// behind the per-source, per-site and per-period figures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    SourceKind,
    Site,
    Period,
}

/// Five-number summary plus mean and count for one score dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreStats {
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

/// Statistics of one group, one entry per score kind.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats {
    pub label: String,
    pub per_kind: Vec<(ScoreKind, ScoreStats)>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AggregateError {
    #[error("no relevant analyses with scores to aggregate")]
    EmptyInput,
}

/// Best-effort registrable domain of a URL, used as the site grouping label.
///
/// Handles the common two-level public suffixes (`co.uk`, `com.au`, ...);
/// anything unparseable falls back to the raw input.
pub fn site_domain(url: &str) -> String {
    let rest = url
        .trim()
        .strip_prefix("https://")
        .or_else(|| url.trim().strip_prefix("http://"))
        .unwrap_or(url.trim());
    let host = rest.split(['/', '?', '#']).next().unwrap_or(rest);
    let host = host.split('@').next_back().unwrap_or(host);
    let host = host.split(':').next().unwrap_or(host);
    let labels: Vec<&str> = host.split('.').filter(|l| !l.is_empty()).collect();
    if labels.len() < 2 {
        return host.to_string();
    }
    let tld = labels[labels.len() - 1];
    let second = labels[labels.len() - 2];
    let second_level_suffix = tld.len() == 2
        && matches!(
            second,
            "co" | "com" | "org" | "net" | "ac" | "gov" | "edu" | "or"
        );
    let take = if second_level_suffix && labels.len() >= 3 {
        3
    } else {
        2
    };
    labels[labels.len() - take..].join(".")
}

fn group_label(doc: &SourceDocument, group_by: GroupBy) -> String {
    match group_by {
        GroupBy::SourceKind => doc.source_kind.as_str().to_string(),
        GroupBy::Site => site_domain(&doc.url),
        GroupBy::Period => doc.period_label.clone(),
    }
}

fn stats_of(values: &[f64]) -> ScoreStats {
    let sorted = sorted_copy(values);
    ScoreStats {
        mean: values.iter().sum::<f64>() / values.len() as f64,
        median: quantile_sorted(&sorted, 0.5),
        q1: quantile_sorted(&sorted, 0.25),
        q3: quantile_sorted(&sorted, 0.75),
        min: sorted[0],
        max: sorted[sorted.len() - 1],
        n: values.len(),
    }
}

/// Aggregates scores of relevant analyses into per-group statistics.
///
/// Analyses are joined with their source documents so the grouping label can
/// come from document metadata. Irrelevant or unscored analyses are skipped;
/// if nothing remains the input is considered empty. Groups are returned in
/// sorted label order; empty groups never appear.
pub fn aggregate_scores(
    pairs: &[(&SourceDocument, &DocumentAnalysis)],
    group_by: GroupBy,
) -> Result<Vec<GroupStats>, AggregateError> {
    let mut groups: alloc::collections::BTreeMap<String, Vec<crate::types::ScoreSet>> =
        alloc::collections::BTreeMap::new();
    for (doc, analysis) in pairs {
        let Some(scores) = analysis.scores else {
            continue;
        };
        if !analysis.relevant {
            continue;
        }
        groups
            .entry(group_label(doc, group_by))
            .or_default()
            .push(scores);
    }
    if groups.is_empty() {
        return Err(AggregateError::EmptyInput);
    }
    Ok(groups
        .into_iter()
        .map(|(label, sets)| {
            let per_kind = ScoreKind::ALL
                .iter()
                .map(|&kind| {
                    let values: Vec<f64> = sets.iter().map(|s| f64::from(s.get(kind))).collect();
                    (kind, stats_of(&values))
                })
                .collect();
            GroupStats { label, per_kind }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{validate_scores, SourceKind};
    use alloc::collections::BTreeMap;
    use alloc::format;
    use alloc::vec;
    use proptest::prelude::*;

    fn doc(url: &str, kind: SourceKind, period: &str) -> SourceDocument {
        SourceDocument::new(
            kind,
            url.to_string(),
            "q".to_string(),
            period.to_string(),
            "2025-04-10T00:00:00Z".to_string(),
            "text".to_string(),
            BTreeMap::new(),
        )
        .unwrap()
    }

    fn analysis(doc: &SourceDocument, s: (i64, i64, i64)) -> DocumentAnalysis {
        DocumentAnalysis {
            doc_id: doc.id.clone(),
            relevant: true,
            summary: "s".to_string(),
            scores: Some(validate_scores(s).unwrap()),
            model_id: "m".to_string(),
            prompt_version: "v1".to_string(),
            retry_count: 0,
            truncated: false,
            prompt_tokens: 0,
        }
    }

    #[test]
    fn two_point_group_mean() {
        let d1 = doc("https://a.test/1", SourceKind::Web, "2021");
        let d2 = doc("https://a.test/2", SourceKind::Web, "2021");
        let a1 = analysis(&d1, (2, 2, 2));
        let a2 = analysis(&d2, (4, 4, 4));
        let out = aggregate_scores(&[(&d1, &a1), (&d2, &a2)], GroupBy::Period).unwrap();
        assert_eq!(out.len(), 1);
        for (_, stats) in &out[0].per_kind {
            assert_eq!(stats.mean, 3.0);
            assert_eq!(stats.n, 2);
        }
    }

    #[test]
    fn degenerate_quartiles_single_analysis() {
        let d = doc("https://a.test/1", SourceKind::Web, "2021");
        let a = analysis(&d, (1, -3, 5));
        let out = aggregate_scores(&[(&d, &a)], GroupBy::Site).unwrap();
        let (_, stats) = &out[0].per_kind[1];
        assert_eq!(stats.q1, -3.0);
        assert_eq!(stats.median, -3.0);
        assert_eq!(stats.q3, -3.0);
        assert_eq!(stats.n, 1);
    }

    #[test]
    fn per_period_counts_sum_to_total() {
        // 258 relevant analyses spread over five periods.
        let periods = ["2021", "2022", "2023", "2024", "2025"];
        let mut docs = vec![];
        for i in 0..258usize {
            let p = periods[i % periods.len()];
            docs.push(doc(&format!("https://s{i}.test/a"), SourceKind::Web, p));
        }
        let analyses: Vec<DocumentAnalysis> = docs
            .iter()
            .map(|d| analysis(d, ((258 % 5) as i64 - 2, 0, 1)))
            .collect();
        let pairs: Vec<(&SourceDocument, &DocumentAnalysis)> =
            docs.iter().zip(analyses.iter()).collect();
        let out = aggregate_scores(&pairs, GroupBy::Period).unwrap();
        assert_eq!(out.len(), 5);
        let total: usize = out.iter().map(|g| g.per_kind[0].1.n).sum();
        assert_eq!(total, 258);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert_eq!(
            aggregate_scores(&[], GroupBy::Period),
            Err(AggregateError::EmptyInput)
        );
        // Irrelevant analyses do not count either.
        let d = doc("https://a.test/1", SourceKind::Web, "2021");
        let mut a = analysis(&d, (0, 0, 0));
        a.relevant = false;
        a.scores = None;
        assert_eq!(
            aggregate_scores(&[(&d, &a)], GroupBy::Period),
            Err(AggregateError::EmptyInput)
        );
    }

    #[test]
    fn site_domain_extraction() {
        assert_eq!(site_domain("https://www.cnn.com/2024/a"), "cnn.com");
        assert_eq!(site_domain("https://edition.cnn.com/x"), "cnn.com");
        assert_eq!(site_domain("https://www.bbc.co.uk/news"), "bbc.co.uk");
        assert_eq!(site_domain("http://lemonde.fr"), "lemonde.fr");
        assert_eq!(site_domain("https://nato.int:8443/docs?q=1"), "nato.int");
    }

    proptest! {
        // Mean and quartiles agree with a direct sort-based oracle.
        #[test]
        fn stats_match_oracle(values in prop::collection::vec(-5i32..=5, 1..40)) {
            let floats: Vec<f64> = values.iter().map(|&v| f64::from(v)).collect();
            let stats = stats_of(&floats);

            let oracle_mean = floats.iter().sum::<f64>() / floats.len() as f64;
            prop_assert!((stats.mean - oracle_mean).abs() < 1e-12);

            // Oracle quantile: independent evaluation of the interpolation rule.
            let mut sorted = floats.clone();
            sorted.sort_by(f64::total_cmp);
            let oracle_q = |p: f64| {
                let pos = p * (sorted.len() as f64 - 1.0);
                let below = sorted[pos.floor() as usize];
                let above = sorted[pos.ceil() as usize];
                below + (above - below) * (pos - pos.floor())
            };
            prop_assert!((stats.q1 - oracle_q(0.25)).abs() < 1e-12);
            prop_assert!((stats.median - oracle_q(0.5)).abs() < 1e-12);
            prop_assert!((stats.q3 - oracle_q(0.75)).abs() < 1e-12);
            prop_assert_eq!(stats.min, sorted[0]);
            prop_assert_eq!(stats.max, sorted[sorted.len() - 1]);
        }
    }
}

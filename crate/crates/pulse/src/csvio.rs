//! CSV emission for scores, posterior draws, trajectories and fit paths.
//!
//! Float formatting routes through one helper so emitted files are
//! byte-stable across runs.

use std::io::Write;
use std::path::Path;

use opinion_pulse_core::bayestrend::PosteriorSummary;
use opinion_pulse_core::opiniondyn::{FitResult, Trajectory};
use opinion_pulse_core::stats::GroupStats;
use opinion_pulse_core::types::{DocumentAnalysis, ScoreKind, TrendSeries};

#[derive(Debug, thiserror::Error)]
pub enum CsvError {
    #[error("failed writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad scores csv at line {line}: {reason}")]
    BadRow { line: usize, reason: String },
}

fn io_err(path: &Path, source: std::io::Error) -> CsvError {
    CsvError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Canonical float rendering: up to 12 significant digits, no trailing
/// zeros, integral values without a decimal point.
pub fn fmt_f64(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        return format!("{}", v as i64);
    }
    let mut s = format!("{v:.12}");
    while s.ends_with('0') {
        s.pop();
    }
    if s.ends_with('.') {
        s.pop();
    }
    s
}

/// Raw per-document scores: `doc_id,nato_sentiment,nato_unity,article5_trust`.
pub fn write_raw_scores(path: &Path, analyses: &[&DocumentAnalysis]) -> Result<(), CsvError> {
    let mut out = String::from("doc_id,nato_sentiment,nato_unity,article5_trust\n");
    for analysis in analyses {
        let Some(scores) = analysis.scores else {
            continue;
        };
        out.push_str(&format!(
            "{},{},{},{}\n",
            analysis.doc_id, scores.nato_sentiment, scores.nato_unity, scores.article5_trust
        ));
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Aggregate score table: `label,score_kind,t,score,n`, one row per
/// (group, score kind) with `t` the 1-based index of the group's period.
pub fn write_aggregates(path: &Path, per_period: &[(u32, &GroupStats)]) -> Result<(), CsvError> {
    let mut out = String::from("label,score_kind,t,score,n\n");
    for (t, group) in per_period {
        for (kind, stats) in &group.per_kind {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                group.label,
                kind.as_str(),
                t,
                fmt_f64(stats.mean),
                stats.n
            ));
        }
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

/// One observation row of the scores table consumed by the trend command.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub label: String,
    pub score_kind: ScoreKind,
    pub t: u32,
    pub score: f64,
    pub n: usize,
}

pub fn write_score_rows(path: &Path, rows: &[ScoreRow]) -> Result<(), CsvError> {
    let mut out = String::from("label,score_kind,t,score,n\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.label,
            row.score_kind.as_str(),
            row.t,
            fmt_f64(row.score),
            row.n
        ));
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

fn parse_kind(raw: &str, line: usize) -> Result<ScoreKind, CsvError> {
    match raw {
        "sentiment" => Ok(ScoreKind::Sentiment),
        "unity" => Ok(ScoreKind::Unity),
        "article5" => Ok(ScoreKind::Article5),
        other => Err(CsvError::BadRow {
            line,
            reason: format!("unknown score kind {other:?}"),
        }),
    }
}

/// Reads a scores table back into rows.
pub fn read_score_rows(path: &Path) -> Result<Vec<ScoreRow>, CsvError> {
    let raw = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut rows = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        if idx == 0 || line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(CsvError::BadRow {
                line: line_no,
                reason: format!("expected 5 fields, got {}", fields.len()),
            });
        }
        let bad = |reason: &str| CsvError::BadRow {
            line: line_no,
            reason: reason.to_string(),
        };
        rows.push(ScoreRow {
            label: fields[0].to_string(),
            score_kind: parse_kind(fields[1], line_no)?,
            t: fields[2].parse().map_err(|_| bad("t is not an integer"))?,
            score: fields[3]
                .parse()
                .map_err(|_| bad("score is not a number"))?,
            n: fields[4].parse().map_err(|_| bad("n is not an integer"))?,
        });
    }
    Ok(rows)
}

/// Groups score rows into one trend series per (label, kind).
pub fn rows_to_series(rows: &[ScoreRow]) -> Vec<TrendSeries> {
    let mut by_key: std::collections::BTreeMap<(String, ScoreKind), Vec<(u32, f64)>> =
        std::collections::BTreeMap::new();
    for row in rows {
        by_key
            .entry((row.label.clone(), row.score_kind))
            .or_default()
            .push((row.t, row.score));
    }
    by_key
        .into_iter()
        .map(|((label, score_kind), mut points)| {
            points.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
            TrendSeries {
                label,
                score_kind,
                points,
            }
        })
        .collect()
}

/// Posterior draws: `param,chain,draw,value`.
pub fn write_draws(path: &Path, summary: &PosteriorSummary) -> Result<(), CsvError> {
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "param,chain,draw,value").map_err(|e| io_err(path, e))?;
    for param in &summary.draws {
        for (chain_idx, chain) in param.chains.iter().enumerate() {
            for (draw_idx, value) in chain.iter().enumerate() {
                writeln!(
                    w,
                    "{},{},{},{}",
                    param.name,
                    chain_idx,
                    draw_idx,
                    fmt_f64(*value)
                )
                .map_err(|e| io_err(path, e))?;
            }
        }
    }
    Ok(())
}

/// Posterior summary rows:
/// `label,score_kind,param,mean,sd,q2.5,q25,q50,q75,q97.5,rhat`.
pub fn write_trend_summary(
    path: &Path,
    fits: &[(String, ScoreKind, PosteriorSummary)],
) -> Result<(), CsvError> {
    let mut out = String::from("label,score_kind,param,mean,sd,q2.5,q25,q50,q75,q97.5,rhat\n");
    for (label, kind, summary) in fits {
        for p in &summary.params {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                label,
                kind.as_str(),
                p.name,
                fmt_f64(p.mean),
                fmt_f64(p.sd),
                fmt_f64(p.q2_5),
                fmt_f64(p.q25),
                fmt_f64(p.q50),
                fmt_f64(p.q75),
                fmt_f64(p.q97_5),
                fmt_f64(p.rhat)
            ));
        }
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Trajectory export: `t,x,E`.
pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<(), CsvError> {
    let mut out = String::from("t,x,E\n");
    for i in 0..traj.len() {
        out.push_str(&format!(
            "{},{},{}\n",
            fmt_f64(traj.times[i]),
            fmt_f64(traj.x[i]),
            fmt_f64(traj.e[i])
        ));
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Fit path export: `iter,loss,a,b,c,d`.
pub fn write_fit_path(path: &Path, result: &FitResult) -> Result<(), CsvError> {
    let mut out = String::from("iter,loss,a,b,c,d\n");
    for (i, (loss, params)) in result
        .loss_history
        .iter()
        .zip(&result.param_history)
        .enumerate()
    {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            i,
            fmt_f64(*loss),
            fmt_f64(params.a),
            fmt_f64(params.b),
            fmt_f64(params.c),
            fmt_f64(params.d)
        ));
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

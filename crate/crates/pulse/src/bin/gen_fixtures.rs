//! Regenerates the offline test corpus under `fixtures/`.
//!
//! The corpus contains canned backend responses for every request the
//! offline pipeline makes (search pages, HTML articles, YouTube and Reddit
//! API payloads) plus replay files for every chat exchange, keyed by the
//! same fingerprints the production code computes. Run after changing
//! prompts, wire shapes or the fixture scenario itself:
//!
//! ```text
//! cargo run -p opinion-pulse --bin gen-fixtures
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use opinion_pulse::cli::{cmd_ingest, IngestArgs, RunArgs};
use opinion_pulse::llm::{summary_entry, write_replay_fixture, ChatConfig};
use opinion_pulse::store::{CorruptPolicy, JsonlStore};
use opinion_pulse::transport::ApiRequest;
use opinion_pulse_core::prompt::{
    build_level1_prompt, build_level2_prompt, Level2Task, CORRECTIVE_SUFFIX,
};
use opinion_pulse_core::reply::parse_analysis;
use opinion_pulse_core::stats::site_domain;
use opinion_pulse_core::types::{DocumentAnalysis, SourceDocument, SourceKind};

const QUERY_UNITY: &str = "NATO unity OR security";
const QUERY_ARTICLE5: &str = "NATO article 5";
const PERIODS: [&str; 5] = ["2021", "2022", "2023", "2024", "2025"];
const YT_QUERY: &str = "NATO article 5";
const YT_PERIOD: &str = "2025-03-01..2025-04-10";
const REDDIT_QUERY: &str = "NATO unity";
const REDDIT_PERIOD: &str = "2025";

/// The free-form question the query fixtures answer.
pub const FIXTURE_QUESTION: &str =
    "List the top 5 sources with links where trust in the mutual-defense guarantee is openly questioned";

fn main() -> anyhow::Result<()> {
    let fixtures_root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let corpus = fixtures_root.join("corpus");
    if corpus.exists() {
        std::fs::remove_dir_all(&corpus)?;
    }
    std::fs::create_dir_all(corpus.join("llm"))?;

    write_config(&fixtures_root)?;
    write_search_fixtures(&corpus)?;
    write_page_fixtures(&corpus)?;
    write_youtube_fixtures(&corpus)?;
    write_reddit_fixtures(&corpus)?;

    // Run the real offline ingest to obtain documents exactly as the
    // pipeline will see them (extraction, ordering, ids).
    let staging = std::env::temp_dir().join(format!("op-fixture-staging-{}", std::process::id()));
    if staging.exists() {
        std::fs::remove_dir_all(&staging)?;
    }
    std::fs::create_dir_all(&staging)?;
    let run = RunArgs {
        config: Some(fixtures_root.join("config.json")),
        output: staging.clone(),
        offline: true,
        seed: 0,
    };
    let ingest = IngestArgs {
        sources: vec!["web".into(), "youtube".into(), "reddit".into()],
    };
    cmd_ingest(&ingest, &run).map_err(|e| anyhow::anyhow!("staging ingest failed: {e}"))?;

    let store: JsonlStore<SourceDocument> = JsonlStore::new(staging.join("documents.jsonl"));
    let docs = store.load_all(CorruptPolicy::Strict)?.records;
    println!("staging ingest produced {} documents", docs.len());

    let llm_dir = corpus.join("llm");
    let chat_cfg = chat_config();
    let analyses = write_level1_fixtures(&llm_dir, &chat_cfg, &docs)?;
    write_level2_fixture(&llm_dir, &chat_cfg, &docs, &analyses)?;
    write_query_fixture(&llm_dir, &chat_cfg, &docs, &analyses)?;

    let files = std::fs::read_dir(&corpus)?.count() + std::fs::read_dir(&llm_dir)?.count();
    println!(
        "corpus written: {} fixture files under {}",
        files,
        corpus.display()
    );
    std::fs::remove_dir_all(&staging)?;
    Ok(())
}

fn chat_config() -> ChatConfig {
    // Must match fixtures/config.json exactly: these fields enter the
    // request body and therefore the replay fingerprints.
    ChatConfig {
        endpoint: "https://llm.fixture.test/v1".into(),
        model_id: "fixture-model".into(),
        temperature: 0.0,
        max_output_tokens: None,
        token_budget: 8000,
        timeout_secs: 30.0,
        replay_dir: None,
        api_key_env: "LLM_API_KEY".into(),
        in_flight: 4,
    }
}

fn write_config(root: &Path) -> anyhow::Result<()> {
    let config = json!({
        "fixture_dir": "corpus",
        "queries": [QUERY_UNITY, QUERY_ARTICLE5],
        "periods": PERIODS,
        "max_results": 2,
        "search": {
            "endpoint_base": "https://search.fixture.test",
            "rate_limit": 1000.0,
            "timeout_secs": 5.0
        },
        "youtube": {
            "endpoint_base": "https://youtube.fixture.test",
            "rate_limit": 1000.0,
            "timeout_secs": 5.0,
            "min_views": 500000,
            "queries": [YT_QUERY],
            "period_label": YT_PERIOD
        },
        "reddit": {
            "endpoint_base": "https://reddit.fixture.test",
            "rate_limit": 1000.0,
            "timeout_secs": 5.0,
            "limit": 5,
            "queries": [REDDIT_QUERY],
            "period_label": REDDIT_PERIOD
        },
        "llm": {
            "endpoint": "https://llm.fixture.test/v1",
            "model_id": "fixture-model",
            "temperature": 0.0,
            "token_budget": 8000,
            "timeout_secs": 30.0
        }
    });
    std::fs::write(
        root.join("config.json"),
        serde_json::to_string_pretty(&config)?,
    )?;
    Ok(())
}

fn page_url(site: &str, period: &str) -> String {
    format!("https://www.{site}/{period}/alliance-report")
}

/// The search result slots: (query, period) -> ordered page sites.
/// `blocked-gazette.test` serves a 403 and `render-only.test` a page whose
/// text requires scripting, so both drop out of the corpus as recorded
/// failures.
fn web_slots() -> Vec<(&'static str, &'static str, [&'static str; 2])> {
    vec![
        (
            QUERY_UNITY,
            "2021",
            ["daily-chronicle.test", "capital-desk.test"],
        ),
        (
            QUERY_UNITY,
            "2022",
            ["daily-chronicle.test", "harbor-watch.test"],
        ),
        (
            QUERY_UNITY,
            "2023",
            ["daily-chronicle.test", "northline-news.test"],
        ),
        (
            QUERY_UNITY,
            "2024",
            ["daily-chronicle.test", "render-only.test"],
        ),
        (
            QUERY_UNITY,
            "2025",
            ["daily-chronicle.test", "harbor-watch.test"],
        ),
        (
            QUERY_ARTICLE5,
            "2021",
            ["eastgate-review.test", "ledger-tribune.test"],
        ),
        (
            QUERY_ARTICLE5,
            "2022",
            ["eastgate-review.test", "forum-watch.test"],
        ),
        (
            QUERY_ARTICLE5,
            "2023",
            ["eastgate-review.test", "harbor-watch.test"],
        ),
        (
            QUERY_ARTICLE5,
            "2024",
            ["eastgate-review.test", "meridian-post.test"],
        ),
        (
            QUERY_ARTICLE5,
            "2025",
            ["blocked-gazette.test", "signal-daily.test"],
        ),
    ]
}

fn search_request(query: &str, period: &str) -> ApiRequest {
    let (from, to) = match period {
        "2025" => ("20250101".to_string(), "20250410".to_string()),
        year => (format!("{year}0101"), format!("{year}1231")),
    };
    ApiRequest::get("https://search.fixture.test/customsearch/v1")
        .param("q", query)
        .param("num", "2")
        .param("start", "1")
        .param("sort", format!("date:r:{from}:{to}"))
}

fn write_fixture_json(dir: &Path, req: &ApiRequest, payload: &Value) -> anyhow::Result<()> {
    std::fs::write(
        dir.join(format!("{}.json", req.fingerprint())),
        serde_json::to_string_pretty(payload)?,
    )?;
    Ok(())
}

fn write_search_fixtures(corpus: &Path) -> anyhow::Result<()> {
    for (query, period, sites) in web_slots() {
        let items: Vec<Value> = sites
            .iter()
            .map(|site| json!({"link": page_url(site, period)}))
            .collect();
        write_fixture_json(
            corpus,
            &search_request(query, period),
            &json!({ "items": items }),
        )?;
    }
    Ok(())
}

fn page_html(site: &str, period: &str) -> String {
    let name = site.trim_end_matches(".test").replace('-', " ");
    format!(
        "<html><head><title>{name} | alliance report {period}</title>\
         <style>body {{ margin: 0 }}</style></head><body>\
         <nav><a href=\"/\">home</a><a href=\"/world\">world</a></nav>\
         <article>\
         <h1>Alliance cohesion in {period}</h1>\
         <p>{name} examines how NATO members weighed collective security commitments \
         during {period}, with capitals debating burden sharing and the credibility of \
         mutual defense.</p>\
         <p>Officials quoted by {name} disagreed on whether Article 5 guarantees would \
         hold under pressure, and public statements in {period} moved markets of opinion \
         on alliance unity.</p>\
         <p>Analysts close to the file told {name} that deterrence rests on political \
         will as much as capability.</p>\
         </article>\
         <script>analytics.track('{period}');</script>\
         <footer>contact {site}</footer></body></html>"
    )
}

fn write_page_fixtures(corpus: &Path) -> anyhow::Result<()> {
    for (_, period, sites) in web_slots() {
        for site in sites {
            let url = page_url(site, period);
            let req = ApiRequest::get(&url).html();
            match site {
                "blocked-gazette.test" => {
                    std::fs::write(corpus.join(format!("{}.status", req.fingerprint())), "403")?;
                }
                "render-only.test" => {
                    std::fs::write(
                        corpus.join(format!("{}.html", req.fingerprint())),
                        "<html><body><script>render()</script></body></html>",
                    )?;
                }
                _ => {
                    std::fs::write(
                        corpus.join(format!("{}.html", req.fingerprint())),
                        page_html(site, period),
                    )?;
                }
            }
        }
    }
    Ok(())
}

/// (id, views, comment count); transcripts derive from the id.
const YT_VIDEOS: [(&str, u64, usize); 4] = [
    ("vid-alpha", 900_000, 3),
    ("vid-bravo", 650_000, 0),
    ("vid-low", 120_000, 5),
    ("vid-delta", 1_200_000, 4),
];

fn write_youtube_fixtures(corpus: &Path) -> anyhow::Result<()> {
    let base = "https://youtube.fixture.test";
    let items: Vec<Value> = YT_VIDEOS
        .iter()
        .map(|(id, _, _)| {
            json!({"id": {"videoId": id}, "snippet": {"title": format!("Briefing {id}")}})
        })
        .collect();
    let search = ApiRequest::get(format!("{base}/youtube/v3/search"))
        .param("part", "snippet")
        .param("type", "video")
        .param("q", YT_QUERY)
        .param("publishedAfter", "2025-03-01T00:00:00Z")
        .param("publishedBefore", "2025-04-10T23:59:59Z")
        .param("maxResults", "25");
    write_fixture_json(corpus, &search, &json!({ "items": items }))?;

    for (id, views, n_comments) in YT_VIDEOS {
        let stats = ApiRequest::get(format!("{base}/youtube/v3/videos"))
            .param("part", "statistics")
            .param("id", id);
        write_fixture_json(
            corpus,
            &stats,
            &json!({"items": [{"statistics": {"viewCount": views.to_string()}}]}),
        )?;

        let transcript = ApiRequest::get(format!("{base}/youtube/transcript")).param("videoId", id);
        write_fixture_json(
            corpus,
            &transcript,
            &json!({"text": format!(
                "Transcript of {id}: the briefing walks through alliance unity, \
                 the mutual defense clause, and whether members believe the guarantee \
                 is automatic. The presenter closes on public trust in collective defense."
            )}),
        )?;

        let comments: Vec<Value> = (0..n_comments)
            .map(|i| {
                json!({"snippet": {"topLevelComment": {"snippet": {"textDisplay": format!(
                    "Viewer {i} on {id}: if the treaty is tested, will every ally actually show up?"
                )}}}})
            })
            .collect();
        let comments_req = ApiRequest::get(format!("{base}/youtube/v3/commentThreads"))
            .param("part", "snippet")
            .param("videoId", id)
            .param("maxResults", "100");
        write_fixture_json(corpus, &comments_req, &json!({ "items": comments }))?;
    }
    Ok(())
}

/// (thread id, title, body, comments)
fn reddit_threads() -> Vec<(&'static str, &'static str, &'static str, Vec<&'static str>)> {
    vec![
        (
            "alpha-defence",
            "How solid is alliance unity right now?",
            "Serious question about whether members still agree on collective defense.",
            vec![
                "Unity holds at summits and frays in budget season.",
                "Depends entirely on the biggest member's politics.",
            ],
        ),
        (
            "budget-rows",
            "Burden sharing fight is getting ugly",
            "",
            vec![
                "Nobody hits the spending target, then everyone acts shocked.",
                "The guarantee is only as good as the political will behind it.",
                "This is why trust in the mutual defense clause keeps sliding.",
            ],
        ),
        (
            "exercise-north",
            "Largest joint exercise in years wraps up",
            "Footage and numbers inside.",
            vec!["Genuinely impressive interoperability this time."],
        ),
        (
            "offtopic-cooking",
            "Field rations cook-off thread",
            "Post your best improvised meals.",
            vec!["The winner is obviously the stew."],
        ),
    ]
}

fn write_reddit_fixtures(corpus: &Path) -> anyhow::Result<()> {
    let base = "https://reddit.fixture.test";
    let children: Vec<Value> = reddit_threads()
        .iter()
        .map(|(id, title, body, _)| {
            json!({"data": {"id": id, "title": title, "selftext": body,
                   "permalink": format!("/r/geopolitics/comments/{id}/x/")}})
        })
        .collect();
    let search = ApiRequest::get(format!("{base}/search.json"))
        .param("q", REDDIT_QUERY)
        .param("limit", "5")
        .param("sort", "new")
        .param("t", "year");
    write_fixture_json(corpus, &search, &json!({"data": {"children": children}}))?;

    for (id, _, _, comments) in reddit_threads() {
        let req = ApiRequest::get(format!("{base}/comments/{id}.json")).param("limit", "100");
        let children: Vec<Value> = comments
            .iter()
            .map(|c| json!({"data": {"body": c}}))
            .collect();
        write_fixture_json(corpus, &req, &json!({"data": {"children": children}}))?;
    }
    Ok(())
}

/// Per-source score table. Web sites are keyed by (site, period); the
/// trajectories drift downward over the periods, mirroring the kind of
/// trend the regression stage is meant to pick up.
fn web_scores(site: &str, period: &str) -> Option<(i64, i64, i64)> {
    match (site, period) {
        ("daily-chronicle.test", "2021") => Some((3, 4, 3)),
        ("daily-chronicle.test", "2022") => Some((2, 3, 2)),
        ("daily-chronicle.test", "2023") => Some((1, 1, 0)),
        ("daily-chronicle.test", "2024") => Some((0, -1, -1)),
        ("daily-chronicle.test", "2025") => Some((-2, -3, -3)),
        ("eastgate-review.test", "2021") => Some((2, 2, 1)),
        ("eastgate-review.test", "2022") => Some((3, 2, 2)),
        ("eastgate-review.test", "2023") => Some((0, 0, -1)),
        ("eastgate-review.test", "2024") => Some((-1, -2, -2)),
        ("harbor-watch.test", "2022") => Some((1, 2, 1)),
        ("harbor-watch.test", "2023") => Some((0, 0, -1)),
        ("harbor-watch.test", "2025") => Some((-3, -3, -4)),
        ("capital-desk.test", "2021") => Some((4, 3, 2)),
        ("northline-news.test", "2023") => Some((1, 0, 0)),
        ("ledger-tribune.test", "2021") => Some((2, 1, 1)),
        ("forum-watch.test", "2022") => None, // scored irrelevant
        ("meridian-post.test", "2024") => Some((-1, -1, -2)),
        ("signal-daily.test", "2025") => Some((-2, -2, -3)),
        _ => None,
    }
}

fn youtube_scores(kind: SourceKind, video_id: &str) -> Option<(i64, i64, i64)> {
    match (kind, video_id) {
        (SourceKind::YoutubeVideo, "vid-alpha") => Some((2, 1, 0)),
        (SourceKind::YoutubeComments, "vid-alpha") => Some((-1, -2, -3)),
        (SourceKind::YoutubeVideo, "vid-bravo") => Some((1, 2, 2)),
        (SourceKind::YoutubeVideo, "vid-delta") => Some((-2, -1, -2)),
        (SourceKind::YoutubeComments, "vid-delta") => Some((-3, -4, -4)),
        _ => None,
    }
}

fn reddit_scores(thread_id: &str) -> Option<(i64, i64, i64)> {
    match thread_id {
        "alpha-defence" => Some((0, -1, -1)),
        "budget-rows" => Some((-2, -3, -3)),
        "exercise-north" => Some((2, 1, 0)),
        "offtopic-cooking" => None, // scored irrelevant
        _ => None,
    }
}

/// The document whose first reply is deliberately malformed; the retry
/// (corrective suffix) resolves to a valid reply.
fn is_retry_doc(doc: &SourceDocument) -> bool {
    doc.source_kind == SourceKind::Web
        && site_domain(&doc.url) == "harbor-watch.test"
        && doc.period_label == "2023"
}

fn reply_for(doc: &SourceDocument) -> Value {
    let scores = match doc.source_kind {
        SourceKind::Web => web_scores(&site_domain(&doc.url), &doc.period_label),
        SourceKind::YoutubeVideo | SourceKind::YoutubeComments => {
            youtube_scores(doc.source_kind, doc.extra.get("video_id").map_or("", |s| s))
        }
        SourceKind::RedditThread => reddit_scores(doc.extra.get("thread_id").map_or("", |s| s)),
    };
    match scores {
        Some((s, u, t)) => {
            let label = match doc.source_kind {
                SourceKind::Web => site_domain(&doc.url),
                SourceKind::YoutubeVideo => {
                    format!("video {}", doc.extra.get("video_id").map_or("?", |s| s))
                }
                SourceKind::YoutubeComments => format!(
                    "comments on {}",
                    doc.extra.get("video_id").map_or("?", |s| s)
                ),
                SourceKind::RedditThread => {
                    format!("thread {}", doc.extra.get("thread_id").map_or("?", |s| s))
                }
            };
            json!({
                "relevant": true,
                "summary": format!(
                    "{label} ({period}): alliance cohesion and the mutual-defense guarantee \
                     are debated; sentiment {s}, unity {u}, treaty trust {t}.",
                    period = doc.period_label
                ),
                "scores": {"nato_sentiment": s, "nato_unity": u, "article5_trust": t}
            })
        }
        None => json!({"relevant": false, "summary": ""}),
    }
}

fn write_level1_fixtures(
    llm_dir: &Path,
    cfg: &ChatConfig,
    docs: &[SourceDocument],
) -> anyhow::Result<Vec<DocumentAnalysis>> {
    let mut analyses = Vec::new();
    for doc in docs {
        let prompt = build_level1_prompt(doc, cfg.token_budget);
        let reply = reply_for(doc);
        let reply_text = serde_json::to_string(&reply)?;

        if is_retry_doc(doc) {
            // First call yields prose, not JSON; the corrective retry
            // resolves to the valid reply.
            write_replay_fixture(
                llm_dir,
                cfg,
                &prompt.system_text,
                &prompt.user_text,
                "The coverage is broadly positive about alliance unity, I would rate it a two.",
            )?;
            let corrective = format!("{}{}", prompt.user_text, CORRECTIVE_SUFFIX);
            write_replay_fixture(llm_dir, cfg, &prompt.system_text, &corrective, &reply_text)?;
        } else {
            write_replay_fixture(
                llm_dir,
                cfg,
                &prompt.system_text,
                &prompt.user_text,
                &reply_text,
            )?;
        }
        analyses.push(parse_analysis(&reply_text, &doc.id)?);
    }
    Ok(analyses)
}

fn write_level2_fixture(
    llm_dir: &Path,
    cfg: &ChatConfig,
    docs: &[SourceDocument],
    analyses: &[DocumentAnalysis],
) -> anyhow::Result<()> {
    let by_id: BTreeMap<&str, &SourceDocument> = docs.iter().map(|d| (d.id.as_str(), d)).collect();
    let entries: Vec<_> = analyses
        .iter()
        .filter(|a| a.relevant && a.scores.is_some())
        .filter_map(|a| {
            by_id
                .get(a.doc_id.as_str())
                .and_then(|d| summary_entry(d, a))
        })
        .collect();
    let prompt = build_level2_prompt(&entries, &Level2Task::Report);

    let report = "## Challenges\n\
        Across the corpus the recurring challenges are burden sharing, doubts about the \
        automaticity of the mutual-defense guarantee, and political volatility in the \
        largest member states.\n\n\
        ## Time trends\n\
        All three scores drift downward over the five periods: sentiment from mildly \
        positive to negative, unity peaking early before a steady slide, and treaty trust \
        falling fastest after the midpoint of the window.\n\n\
        ## Groups\n\
        Institutional outlets (daily-chronicle.test, capital-desk.test) stay guardedly \
        positive; analytical reviews (eastgate-review.test, harbor-watch.test) turn \
        skeptical; discussion sources (video comments, forum threads) carry the most \
        negative unity and trust scores.";
    write_replay_fixture(
        llm_dir,
        cfg,
        &prompt.instruction_text,
        &prompt.render_user_text(),
        report,
    )?;
    println!("level-2 fixture covers {} entries", entries.len());
    Ok(())
}

fn write_query_fixture(
    llm_dir: &Path,
    cfg: &ChatConfig,
    docs: &[SourceDocument],
    analyses: &[DocumentAnalysis],
) -> anyhow::Result<()> {
    let by_id: BTreeMap<&str, &SourceDocument> = docs.iter().map(|d| (d.id.as_str(), d)).collect();
    let pairs: Vec<(&SourceDocument, &DocumentAnalysis)> = analyses
        .iter()
        .filter(|a| a.relevant && a.scores.is_some())
        .filter_map(|a| by_id.get(a.doc_id.as_str()).map(|d| (*d, a)))
        .collect();
    let (instruction, user_text) =
        opinion_pulse::llm::query_exchange(&pairs, FIXTURE_QUESTION, cfg.token_budget);

    let answer = format!(
        "1. daily-chronicle.test (2025): trust scored -3 amid open doubts.\n   link: {}\n\
         2. harbor-watch.test (2025): treaty trust -4, the lowest in the corpus.\n   link: {}\n\
         3. signal-daily.test (2025): doubts about follow-through, trust -3.\n   link: {}\n\
         4. eastgate-review.test (2024): guarantees called conditional, trust -2.\n   link: {}\n\
         5. alliance-skeptic.example: an often-cited essay outside this corpus.\n   link: https://alliance-skeptic.example/essay",
        page_url("daily-chronicle.test", "2025"),
        page_url("harbor-watch.test", "2025"),
        page_url("signal-daily.test", "2025"),
        page_url("eastgate-review.test", "2024"),
    );
    write_replay_fixture(llm_dir, cfg, &instruction, &user_text, &answer)?;
    Ok(())
}

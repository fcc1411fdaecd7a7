//! The offline guarantee, asserted in-process: a full fixture-mode
//! pipeline never issues a single live request.

use std::path::PathBuf;
use std::sync::atomic::Ordering;

use opinion_pulse::cli::{
    cmd_ingest, cmd_query, cmd_score, cmd_summarize, cmd_trend, IngestArgs, QueryArgs, RunArgs,
    TrendArgs,
};
use opinion_pulse::transport::LIVE_REQUEST_COUNT;

#[test]
fn offline_pipeline_opens_no_sockets() {
    let dir = tempfile::tempdir().unwrap();
    let run = RunArgs {
        config: Some(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/config.json")),
        output: dir.path().to_path_buf(),
        offline: true,
        seed: 5,
    };

    let before = LIVE_REQUEST_COUNT.load(Ordering::SeqCst);
    cmd_ingest(
        &IngestArgs {
            sources: vec!["web".into(), "youtube".into(), "reddit".into()],
        },
        &run,
    )
    .unwrap();
    cmd_score(&run).unwrap();
    cmd_summarize(&run).unwrap();
    cmd_query(
        &QueryArgs {
            question: "List the top 5 sources with links where trust in the mutual-defense guarantee is openly questioned".into(),
        },
        &run,
    )
    .unwrap();
    cmd_trend(
        &TrendArgs {
            scores: None,
            group_by: "site".into(),
        },
        &run,
    )
    .unwrap();

    let after = LIVE_REQUEST_COUNT.load(Ordering::SeqCst);
    assert_eq!(after, before, "offline run touched the network");
}

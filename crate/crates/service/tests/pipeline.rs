mod common;

use stationprint_service::{run_pipeline, AppState, Artifacts, Stage};

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn rerun_skips_every_stage_and_serves() {
    let dir = tempfile::tempdir().unwrap();
    let server = common::synthetic_server(&dir.path().join("fixtures"), 4).await;
    let config = common::quick_config(&server.catalog_url(), &dir.path().join("work"));

    let c = config.clone();
    let (first, second) = tokio::task::spawn_blocking(move || (run_pipeline(&c).unwrap(), run_pipeline(&c).unwrap()))
        .await
        .unwrap();

    assert!(first.stages.iter().all(|s| !s.skipped));
    assert_eq!(first.stages.iter().map(|s| s.stage).collect::<Vec<_>>(), Stage::ALL);
    assert!(second.all_skipped(), "{:?}", second.stages);
    assert_eq!(second.model_version, first.model_version);
    assert_eq!(first.model_version.len(), 16);

    // one hour of 4 stations: nobody complete, identity still holds
    assert_eq!(first.dataset.stations, 4);
    assert_eq!(first.dataset.complete_stations, 0);
    assert_eq!(first.dataset.total_snippets, 96);
    assert!(first.identity_holds);
    assert_eq!(first.summary_line, "4 stations (0 complete, 4 incomplete); 96 snippets = 576 x 0 + 96");

    let art = Artifacts::new(&config);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(art.report()).unwrap()).unwrap();
    assert_eq!(report["model_version"], first.model_version.as_str());
    for f in ["pca_points.csv", "archetypes.csv", "scree.csv", "trajectories.csv", "plot.svg"] {
        assert!(art.analysis().join(f).is_file(), "{f}");
    }

    let state = AppState::new(art, None);
    let snap = state.snapshot().unwrap();
    assert_eq!(snap.store.model_version(), first.model_version);
    assert_eq!(snap.store.stations().len(), 4);
    assert!(!snap.archetypes.is_empty());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn changed_parameters_rerun_downstream_only() {
    let dir = tempfile::tempdir().unwrap();
    let server = common::synthetic_server(&dir.path().join("fixtures"), 4).await;
    let config = common::quick_config(&server.catalog_url(), &dir.path().join("work"));

    let mut changed = config.clone();
    changed.fingerprint_seed = 9;
    let c = config.clone();
    let report = tokio::task::spawn_blocking(move || {
        run_pipeline(&c).unwrap();
        run_pipeline(&changed).unwrap()
    })
    .await
    .unwrap();
    let skipped: Vec<(Stage, bool)> = report.stages.iter().map(|s| (s.stage, s.skipped)).collect();
    assert_eq!(
        skipped,
        [
            (Stage::Crawl, true),
            (Stage::Spectrogram, true),
            (Stage::Train, true),
            (Stage::Encode, true),
            (Stage::Fingerprint, false),
            (Stage::Analyze, false),
        ]
    );
}

#[test]
fn unreachable_catalog_is_a_crawl_failure() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::quick_config("http://127.0.0.1:9/services", dir.path());
    let err = run_pipeline(&config).unwrap_err();
    assert_eq!(err.stage, Stage::Crawl);
}

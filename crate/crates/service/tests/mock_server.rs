mod common;

use std::io::Read;
use std::time::Duration;

use chrono::NaiveDate;
use stationprint_core::collector::{
    crawl, open_icy_stream, parse_catalog, ClockMode, CrawlOptions, IcyDemuxer, SnippetStore,
};
use stationprint_service::{client, load_fixtures, write_synthetic_fixtures, MockIcyServer, StationFixture};

const TIMEOUT: Duration = Duration::from_secs(10);

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn catalog_lists_every_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let server = common::synthetic_server(dir.path(), 5).await;
    let url = server.catalog_url();
    let resp = tokio::task::spawn_blocking(move || client::get(&url).unwrap()).await.unwrap();
    assert_eq!(resp.status, 200);
    let catalog = parse_catalog(&resp.text()).unwrap();
    assert_eq!(catalog.len(), 5);
    assert_eq!(catalog, server.catalog());
    assert!(catalog.iter().all(|s| s.bearer_url.starts_with(&format!("http://{}/stream/", server.addr()))));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn metaint_header_only_when_asked() {
    let dir = tempfile::tempdir().unwrap();
    let server = common::synthetic_server(dir.path(), 1).await;
    let url = server.catalog()[0].bearer_url.clone();
    let (with, without) = tokio::task::spawn_blocking(move || {
        let (with, _) = open_icy_stream(&url, true, TIMEOUT).unwrap();
        let (without, _) = open_icy_stream(&url, false, TIMEOUT).unwrap();
        (with, without)
    })
    .await
    .unwrap();
    assert_eq!(with.metaint, 16_000);
    assert_eq!(with.content_type, "audio/L16;rate=16000;channels=1");
    assert_eq!(without.metaint, 0);
    assert_eq!(server.connections("station0"), 2);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn first_block_carries_the_title() {
    let dir = tempfile::tempdir().unwrap();
    let server = common::synthetic_server(dir.path(), 1).await;
    let url = server.catalog()[0].bearer_url.clone();
    let (events, audio) = tokio::task::spawn_blocking(move || {
        let (header, body) = open_icy_stream(&url, true, TIMEOUT).unwrap();
        let mut demux = IcyDemuxer::new(body, header.metaint);
        let mut audio = vec![0u8; 40_000];
        demux.read_exact(&mut audio).unwrap();
        (demux.take_events(), audio)
    })
    .await
    .unwrap();
    // the empty block at 32000 yields no event
    assert_eq!(events.len(), 1);
    assert_eq!(events[0].offset, 16_000);
    assert_eq!(events[0].title.as_deref(), Some("Station 0 - Track A"));

    // the audio is the fixture's samples, big-endian, from the loop start
    let fixture = load_fixtures(dir.path()).unwrap().remove(0);
    let expected: Vec<u8> = fixture.samples[..20_000].iter().flat_map(|s| s.to_be_bytes()).collect();
    assert_eq!(audio, expected);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn unknown_stream_is_404() {
    let dir = tempfile::tempdir().unwrap();
    let server = common::synthetic_server(dir.path(), 1).await;
    let url = format!("http://{}/stream/nope", server.addr());
    let resp = tokio::task::spawn_blocking(move || client::get(&url).unwrap()).await.unwrap();
    assert_eq!(resp.status, 404);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn dropped_streams_leave_slots_missing() {
    let dir = tempfile::tempdir().unwrap();
    let mut fixtures: Vec<StationFixture> = write_synthetic_fixtures(dir.path(), 2, 16_000, 1).unwrap();
    fixtures[1].drop_after_s = Some(3.0);
    std::fs::write(dir.path().join("stations.json"), serde_json::to_vec(&fixtures).unwrap()).unwrap();
    let server = MockIcyServer::start(load_fixtures(dir.path()).unwrap(), common::any_port()).await.unwrap();

    let catalog = server.catalog();
    let store_dir = tempfile::tempdir().unwrap();
    let root = store_dir.path().to_path_buf();
    let manifests = tokio::task::spawn_blocking(move || {
        let mut opts = CrawlOptions::new(NaiveDate::from_ymd_opt(2019, 11, 4).unwrap());
        opts.hours = 8..9;
        opts.clock = ClockMode::Simulated;
        opts.timeout = TIMEOUT;
        crawl(&catalog, &SnippetStore::new(root), &opts).unwrap()
    })
    .await
    .unwrap();

    assert_eq!(manifests[0].station_id, "station0");
    assert_eq!(manifests[0].snippet_count, 24);
    assert!(manifests[0].missing_slots.iter().all(|s| !(8..9).contains(&chrono::Timelike::hour(s))));
    assert_eq!(manifests[1].snippet_count, 0);
    assert!(!manifests[1].complete);
    // backoff skips some slots without connecting, but no slot is recorded
    assert!(server.connections("station1") >= 1);
    let day = store_dir.path().join("station1/2019-11-04");
    let wavs = std::fs::read_dir(&day).map(|d| d.filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "wav")).count());
    assert_eq!(wavs.unwrap_or(0), 0);
}

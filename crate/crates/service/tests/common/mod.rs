#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::Path;

use stationprint_service::{load_fixtures, write_synthetic_fixtures, MockIcyServer, PipelineConfig};

pub fn any_port() -> SocketAddr {
    "127.0.0.1:0".parse().unwrap()
}

/// Writes `count` synthetic stations under `dir` and serves them.
pub async fn synthetic_server(dir: &Path, count: usize) -> MockIcyServer {
    write_synthetic_fixtures(dir, count, 16_000, 7).unwrap();
    MockIcyServer::start(load_fixtures(dir).unwrap(), any_port()).await.unwrap()
}

/// One simulated hour against `catalog_url` with a tiny autoencoder.
pub fn quick_config(catalog_url: &str, work: &Path) -> PipelineConfig {
    let text = format!(
        "paths.catalog = {catalog_url}\n\
         paths.work = {}\n\
         schedule.hours = 8-9\n\
         schedule.timezone = +01:00\n\
         crawl.clock = simulated\n\
         embed.epochs = 1\n\
         embed.units = 8\n\
         fingerprint.k_range = 2-4\n\
         fingerprint.min_snippets = 12\n\
         analyze.archetypes = 2\n\
         analyze.partitions = morning\n",
        work.display()
    );
    let pairs = stationprint_service::config::parse_pairs(&text).unwrap();
    PipelineConfig::from_pairs(&pairs, Path::new("/")).unwrap()
}

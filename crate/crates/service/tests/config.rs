use std::path::PathBuf;

use stationprint_service::config::{env_name, CatalogSource};
use stationprint_service::{ConfigError, PipelineConfig};

// Environment variables are process-wide, so everything touching them
// lives in this one test.
#[test]
fn file_then_environment() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("catalog.json"), "[]").unwrap();
    let path = dir.path().join("pipeline.conf");
    std::fs::write(&path, "paths.catalog = catalog.json\npaths.work = out\nservice.bind = 127.0.0.1:9000\nfingerprint.k_range = 9-16\n").unwrap();

    let c = PipelineConfig::load(Some(&path)).unwrap();
    assert_eq!(c.catalog, CatalogSource::File(dir.path().join("catalog.json")));
    assert_eq!(c.work_dir, dir.path().join("out"));
    assert_eq!(c.bind.port(), 9000);

    std::env::set_var(env_name("service.bind"), "0.0.0.0:7000");
    std::env::set_var(env_name("fingerprint.k_range"), "3:5");
    let c = PipelineConfig::load(Some(&path)).unwrap();
    assert_eq!(c.bind.to_string(), "0.0.0.0:7000");
    assert_eq!(c.cluster_k, 3..=5);

    std::env::set_var(env_name("fingerprint.k_range"), "1-5");
    assert!(matches!(PipelineConfig::load(Some(&path)), Err(ConfigError::Invalid { .. })));
    std::env::remove_var(env_name("fingerprint.k_range"));
    std::env::remove_var(env_name("service.bind"));

    std::fs::write(&path, "paths.catalog = missing.json\n").unwrap();
    assert!(matches!(PipelineConfig::load(Some(&path)), Err(ConfigError::MissingPath(p)) if p == dir.path().join("missing.json")));
    std::fs::write(&path, "paths.work = /no/such/parent/work\npaths.catalog = http://127.0.0.1:1/services\n").unwrap();
    assert!(matches!(PipelineConfig::load(Some(&path)), Err(ConfigError::MissingPath(p)) if p == PathBuf::from("/no/such/parent")));
}

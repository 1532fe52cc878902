//! Pipeline wiring, configuration, store versioning, the recommendation
//! HTTP API and a mock ICY server for tests.

pub mod api;
pub mod client;
pub mod config;
pub mod mock;
pub mod pipeline;
pub mod version;

pub use api::{router, AppState, Snapshot};
pub use config::{ConfigError, PipelineConfig};
pub use mock::{load_fixtures, write_synthetic_fixtures, MockIcyServer, MockStation, StationFixture};
pub use pipeline::{run_pipeline, Artifacts, RunReport, Stage, StageError};
pub use version::StoreVersion;

/// Process exit code for configuration errors.
pub const EXIT_CONFIG: i32 = 2;
/// Process exit code for a failed pipeline stage.
pub const EXIT_STAGE: i32 = 3;

//! Station catalog, ICY streaming and scheduled snippet recording.

mod catalog;
mod decode;
mod icy;
mod recorder;
mod schedule;
mod store;
mod summary;

use std::io;

use thiserror::Error;

pub use catalog::{load_catalog, parse_catalog, StationRecord};
pub use decode::{decode_audio, AudioFormat, PcmBuffer, PcmSource, PcmStream};
pub use icy::{
    demux_icy, open_icy_stream, parse_stream_title, IcyBody, IcyDemuxer, IcyStreamHeader,
    MetadataEvent, DEFAULT_USER_AGENT,
};
pub use recorder::{crawl, record_snippet, Backoff, ClockMode, CrawlOptions, DecoderFactory, StationRecorder};
pub use schedule::{
    build_schedule, is_excluded_minute, slots_in_hours, Clock, SimulatedClock, SystemClock,
    SLOTS_PER_DAY, SLOTS_PER_HOUR, SNIPPET_SECONDS,
};
pub use store::{write_atomic, AudioSnippet, RecordingManifest, SnippetStore};
pub use summary::{summarize_dataset, DatasetSummary};

pub type Result<T, E = CollectorError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CollectorError {
    #[error("malformed catalog: {0}")]
    MalformedCatalog(String),

    #[error("catalog conflict: station id {0:?} appears more than once")]
    CatalogConflict(String),

    #[error("stream unreachable ({url}): {reason}")]
    StreamUnreachable { url: String, reason: String },

    #[error("not an audio stream: content type {0:?}")]
    NotAStream(String),

    #[error("truncated ICY metadata block at byte offset {offset}")]
    Demux { offset: u64 },

    #[error("unsupported codec: {0:?}")]
    CodecUnsupported(String),

    #[error("stream dropped after {received} of {expected} samples")]
    StreamDropped { received: usize, expected: usize },

    #[error("invalid audio data: {0}")]
    InvalidAudio(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

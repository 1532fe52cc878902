//! Content-based radio station fingerprinting.
//!
//! The crate covers the whole offline pipeline:
//!
//! * [`collector`]: station catalog, ICY stream client and demuxer, the
//!   5-second snippet schedule and an atomic snippet store.
//! * [`dsp`]: resampling and normalized 128-band log-mel spectrograms.
//! * [`embed`]: a recurrent sequence autoencoder whose encoder turns a
//!   spectrogram into a fixed-length embedding.
//! * [`fingerprint`]: K-means over embeddings and per-station cluster
//!   histograms, including night / morning / day partitions.
//! * [`recommend`]: Euclidean k-nearest and radius queries over fingerprints.
//! * [`analyze`]: archetypal analysis, scree elbow, PCA projection and
//!   day-time trajectories, with CSV/SVG export.
//! * [`synth`]: seeded synthetic audio and point sets for tests and benches.

pub mod analyze;
pub mod collector;
pub mod dsp;
pub mod embed;
pub mod fingerprint;
pub mod recommend;
pub mod synth;

pub use analyze::{ArchetypeModel, PcaProjection};
pub use collector::{AudioSnippet, RecordingManifest, StationRecord};
pub use dsp::{MelSpectrogram, SpectrogramParams};
pub use embed::{AutoencoderConfig, Embedding, EncoderModel};
pub use fingerprint::{ClusterModel, Fingerprint, Partition};
pub use recommend::{FingerprintStore, Recommendation};

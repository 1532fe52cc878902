//! K-means clustering of embeddings and per-station cluster histograms.

mod histogram;
mod kmeans;
mod silhouette;
mod store;

use std::collections::BTreeMap;

use chrono::{DateTime, FixedOffset, Utc};
use ndarray::Array2;
use thiserror::Error;

pub use histogram::{
    build_fingerprint, normalize_fingerprint, partition_assignments, station_fingerprints, Fingerprint, Partition,
    PartitionSets, TARGET_MASS,
};
pub use kmeans::{assign, distinct_rows, fit_kmeans, hartigan_refine, lloyd, lloyd_labels, ClusterModel, LloydRun, MAX_ITERATIONS, RESTARTS};
pub use silhouette::{
    pairwise_distances, select_k, silhouette, silhouette_from_distances, subsample, KSelection, SILHOUETTE_SAMPLE_CAP,
};
pub use store::{read_cluster_model, read_fingerprints, write_cluster_model, write_fingerprints};

use crate::embed::Embedding;

pub type Result<T, E = FingerprintError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FingerprintError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid cluster count: {0}")]
    InvalidK(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("station {station_id} has no snippets in partition {partition}")]
    EmptyPartition { station_id: String, partition: Partition },

    #[error("unknown partition {0:?}")]
    UnknownPartition(String),

    #[error("store: {0}")]
    Store(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Settings for [`fingerprint_embeddings`].
#[derive(Debug, Clone)]
pub struct FingerprintOptions {
    pub k_min: usize,
    pub k_max: usize,
    pub seed: u64,
    /// Timezone of the recording schedule, for day-time partitions.
    pub tz: FixedOffset,
    /// Stations with fewer snippets are clustered but not fingerprinted.
    pub min_snippets: usize,
    pub model_version: String,
}

impl Default for FingerprintOptions {
    fn default() -> Self {
        FingerprintOptions {
            k_min: 9,
            k_max: 16,
            seed: 0,
            tz: FixedOffset::east_opt(0).expect("UTC"),
            min_snippets: crate::collector::SLOTS_PER_DAY,
            model_version: String::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FingerprintRun {
    pub selection: KSelection,
    pub fingerprints: Vec<Fingerprint>,
    /// Stations left out for having fewer than `min_snippets` snippets.
    pub skipped: Vec<String>,
}

/// Sorts embeddings by `(station_id, timestamp)` so results do not depend
/// on input order.
pub fn canonical_order(embeddings: &mut [Embedding]) {
    embeddings.sort_by(|a, b| (&a.station_id, a.timestamp).cmp(&(&b.station_id, b.timestamp)));
}

/// Stacks embedding vectors as `f64` rows.
pub fn embedding_matrix(embeddings: &[Embedding]) -> Result<Array2<f64>> {
    let dim = embeddings.first().map_or(0, |e| e.vector.len());
    let mut m = Array2::zeros((embeddings.len(), dim));
    for (i, e) in embeddings.iter().enumerate() {
        if e.vector.len() != dim {
            return Err(FingerprintError::Shape(format!("embedding {i} has {} dimensions, expected {dim}", e.vector.len())));
        }
        m.row_mut(i).iter_mut().zip(&e.vector).for_each(|(o, &v)| *o = v as f64);
    }
    Ok(m)
}

/// Fits K-means on all embeddings (cluster count by silhouette), then builds
/// normalized whole-day and time-of-day fingerprints for every station with
/// enough snippets.
pub fn fingerprint_embeddings(embeddings: &[Embedding], opts: &FingerprintOptions) -> Result<FingerprintRun> {
    let mut sorted = embeddings.to_vec();
    canonical_order(&mut sorted);
    let points = embedding_matrix(&sorted)?;
    let selection = select_k(points.view(), opts.k_min, opts.k_max, opts.seed)?;
    let labels = lloyd_labels(&selection.model, points.view());

    let mut by_station: BTreeMap<&str, (Vec<usize>, Vec<DateTime<Utc>>)> = BTreeMap::new();
    for (e, &l) in sorted.iter().zip(&labels) {
        let entry = by_station.entry(&e.station_id).or_default();
        entry.0.push(l);
        entry.1.push(e.timestamp);
    }
    let mut fingerprints = Vec::new();
    let mut skipped = Vec::new();
    for (station, (labels, times)) in by_station {
        if labels.len() < opts.min_snippets {
            skipped.push(station.to_string());
            continue;
        }
        for mut fp in station_fingerprints(station, &labels, &times, selection.best, opts.tz, TARGET_MASS)? {
            fp.model_version = opts.model_version.clone();
            fingerprints.push(fp);
        }
    }
    Ok(FingerprintRun { selection, fingerprints, skipped })
}

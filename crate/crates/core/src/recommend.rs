//! Euclidean station similarity over a fingerprint store.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collector::StationRecord;
use crate::fingerprint::{read_fingerprints, Fingerprint, FingerprintError, Partition};

pub type Result<T, E = RecommendError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum RecommendError {
    #[error("station {station_id:?} has no {partition} fingerprint")]
    NotFound { station_id: String, partition: Partition },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("mixed model versions in store: {0:?} and {1:?}")]
    VersionMismatch(String, String),

    #[error("duplicate fingerprint for station {station_id:?}, partition {partition}")]
    Duplicate { station_id: String, partition: Partition },

    #[error("fingerprints from {0} and {1} are not mass-normalized and cannot be compared")]
    NotComparable(Partition, Partition),

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error(transparent)]
    Fingerprint(#[from] FingerprintError),
}

/// Catalog fields attached to results.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StationInfo {
    pub name: String,
    pub genres: Vec<String>,
}

/// Immutable set of fingerprints sharing one cluster count and model
/// version.
#[derive(Debug, Clone, Default)]
pub struct FingerprintStore {
    model_version: String,
    n: usize,
    entries: BTreeMap<(String, Partition), Fingerprint>,
    info: BTreeMap<String, StationInfo>,
}

impl FingerprintStore {
    pub fn new(fingerprints: Vec<Fingerprint>) -> Result<Self> {
        let mut store = FingerprintStore::default();
        if let Some(first) = fingerprints.first() {
            store.model_version = first.model_version.clone();
            store.n = first.n;
        }
        for fp in fingerprints {
            if fp.model_version != store.model_version {
                return Err(RecommendError::VersionMismatch(store.model_version, fp.model_version));
            }
            if fp.n != store.n || fp.histogram.len() != fp.n {
                return Err(RecommendError::Shape(format!(
                    "station {} has {} bins, store has {}",
                    fp.station_id,
                    fp.histogram.len(),
                    store.n
                )));
            }
            let key = (fp.station_id.clone(), fp.partition);
            if store.entries.contains_key(&key) {
                return Err(RecommendError::Duplicate { station_id: key.0, partition: key.1 });
            }
            store.entries.insert(key, fp);
        }
        Ok(store)
    }

    /// Reads a fingerprint JSON-lines file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(read_fingerprints(path)?)
    }

    /// Attaches names and genres from a catalog. Stations missing from the
    /// catalog keep their id as name and no genres.
    pub fn with_catalog(mut self, catalog: &[StationRecord]) -> Self {
        self.info = catalog
            .iter()
            .map(|r| (r.station_id.clone(), StationInfo { name: r.name.clone(), genres: r.genres.clone() }))
            .collect();
        self
    }

    pub fn model_version(&self) -> &str {
        &self.model_version
    }

    /// Histogram length shared by every fingerprint (0 when empty).
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, station_id: &str, partition: Partition) -> Option<&Fingerprint> {
        self.entries.get(&(station_id.to_string(), partition))
    }

    /// Station ids in sorted order.
    pub fn stations(&self) -> Vec<&str> {
        let set: BTreeSet<&str> = self.entries.keys().map(|(s, _)| s.as_str()).collect();
        set.into_iter().collect()
    }

    /// Partitions available for a station, in [`Partition::ALL`] order.
    pub fn partitions_of(&self, station_id: &str) -> Vec<Partition> {
        Partition::ALL.into_iter().filter(|&p| self.get(station_id, p).is_some()).collect()
    }

    /// All fingerprints of one partition, sorted by station id.
    pub fn partition(&self, partition: Partition) -> impl Iterator<Item = &Fingerprint> {
        self.entries.iter().filter(move |((_, p), _)| *p == partition).map(|(_, fp)| fp)
    }

    pub fn fingerprints(&self) -> impl Iterator<Item = &Fingerprint> {
        self.entries.values()
    }

    pub fn info(&self, station_id: &str) -> StationInfo {
        self.info
            .get(station_id)
            .cloned()
            .unwrap_or_else(|| StationInfo { name: station_id.to_string(), genres: Vec::new() })
    }

    fn lookup(&self, station_id: &str, partition: Partition) -> Result<&Fingerprint> {
        self.get(station_id, partition)
            .ok_or_else(|| RecommendError::NotFound { station_id: station_id.to_string(), partition })
    }

    /// Every other station with a fingerprint in `partition`, ordered by
    /// distance to the query and then by station id.
    fn ranked(&self, station_id: &str, partition: Partition) -> Result<Vec<Recommendation>> {
        let query = self.lookup(station_id, partition)?;
        let mut out = Vec::new();
        for fp in self.partition(partition).filter(|fp| fp.station_id != station_id) {
            let info = self.info(&fp.station_id);
            out.push(Recommendation {
                station_id: fp.station_id.clone(),
                name: info.name,
                genres: info.genres,
                distance: distance(query, fp)?,
            });
        }
        out.sort_by(|a, b| a.distance.total_cmp(&b.distance).then_with(|| a.station_id.cmp(&b.station_id)));
        Ok(out)
    }
}

/// One similar station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub station_id: String,
    pub name: String,
    pub genres: Vec<String>,
    pub distance: f64,
}

/// Euclidean distance between two histograms.
///
/// Fingerprints from different partitions are only comparable when both
/// carry the normalization mass.
pub fn distance(a: &Fingerprint, b: &Fingerprint) -> Result<f64> {
    if a.histogram.len() != b.histogram.len() || a.n != b.n {
        return Err(RecommendError::Shape(format!("{} bins vs {} bins", a.histogram.len(), b.histogram.len())));
    }
    if a.partition != b.partition && !(a.is_normalized() && b.is_normalized()) {
        return Err(RecommendError::NotComparable(a.partition, b.partition));
    }
    Ok(a.histogram.iter().zip(&b.histogram).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

/// The `k` closest other stations, ascending. Fewer are returned when the
/// store is small.
pub fn nearest_k(store: &FingerprintStore, station_id: &str, k: usize, partition: Partition) -> Result<Vec<Recommendation>> {
    if k == 0 {
        return Err(RecommendError::InvalidQuery("k must be at least 1".into()));
    }
    let mut ranked = store.ranked(station_id, partition)?;
    ranked.truncate(k);
    Ok(ranked)
}

/// Every other station at distance `<= r`, ascending. May be empty.
pub fn within_radius(store: &FingerprintStore, station_id: &str, r: f64, partition: Partition) -> Result<Vec<Recommendation>> {
    if r.is_nan() || r < 0.0 {
        return Err(RecommendError::InvalidQuery(format!("radius must be non-negative, got {r}")));
    }
    let mut ranked = store.ranked(station_id, partition)?;
    ranked.retain(|rec| rec.distance <= r);
    Ok(ranked)
}

/// One plain-text table row: the requested station with its genres, then
/// each result with its genres and distance (two decimals).
pub fn format_row(query: &StationInfo, results: &[Recommendation]) -> String {
    let mut row = cell(&query.name, &query.genres);
    for rec in results {
        let _ = write!(row, " | {}; distance: {:.2}", cell(&rec.name, &rec.genres), rec.distance);
    }
    row
}

fn cell(name: &str, genres: &[String]) -> String {
    if genres.is_empty() {
        name.to_string()
    } else {
        format!("{name} ({})", genres.join(", "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fingerprint::{build_fingerprint, normalize_fingerprint, TARGET_MASS};

    fn fp(id: &str, partition: Partition, histogram: Vec<f64>) -> Fingerprint {
        let sample_count = histogram.iter().sum::<f64>().round() as usize;
        Fingerprint {
            station_id: id.into(),
            partition,
            n: histogram.len(),
            histogram,
            sample_count,
            model_version: "v1".into(),
        }
    }

    #[test]
    fn distance_examples() {
        let a = fp("a", Partition::WholeDay, vec![3.0, 0.0, 0.0]);
        let b = fp("b", Partition::WholeDay, vec![0.0, 4.0, 0.0]);
        assert_eq!(distance(&a, &a).unwrap(), 0.0);
        assert_eq!(distance(&a, &b).unwrap(), 5.0);
        let c = fp("c", Partition::WholeDay, vec![1.0, 2.0]);
        assert!(matches!(distance(&a, &c), Err(RecommendError::Shape(_))));
    }

    #[test]
    fn cross_partition_needs_normalized_mass() {
        let raw = build_fingerprint("s", Partition::Morning, &[0, 1, 1], 2).unwrap();
        let whole = normalize_fingerprint(&build_fingerprint("s", Partition::WholeDay, &[0, 1], 2).unwrap(), TARGET_MASS).unwrap();
        assert!(matches!(distance(&raw, &whole), Err(RecommendError::NotComparable(..))));
        let morning = normalize_fingerprint(&raw, TARGET_MASS).unwrap();
        assert!((distance(&morning, &whole).unwrap() - (96.0f64 * 96.0 * 2.0).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn small_store_truncates() {
        let store = FingerprintStore::new(vec![
            fp("a", Partition::WholeDay, vec![1.0, 0.0]),
            fp("b", Partition::WholeDay, vec![0.0, 1.0]),
        ])
        .unwrap();
        let recs = nearest_k(&store, "a", 5, Partition::WholeDay).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].station_id, "b");
        assert!(matches!(nearest_k(&store, "zzz", 1, Partition::WholeDay), Err(RecommendError::NotFound { .. })));
        assert!(matches!(nearest_k(&store, "a", 1, Partition::Night), Err(RecommendError::NotFound { .. })));
        assert!(nearest_k(&store, "a", 0, Partition::WholeDay).is_err());
        assert!(within_radius(&store, "a", -1.0, Partition::WholeDay).is_err());
    }

    #[test]
    fn ties_break_by_station_id_and_radius_edges() {
        let store = FingerprintStore::new(vec![
            fp("q", Partition::WholeDay, vec![0.0, 0.0]),
            fp("c", Partition::WholeDay, vec![0.0, 5.0]),
            fp("a", Partition::WholeDay, vec![5.0, 0.0]),
            fp("b", Partition::WholeDay, vec![3.0, 4.0]),
            fp("far", Partition::WholeDay, vec![50.0, 50.0]),
        ])
        .unwrap();
        let ids: Vec<_> = nearest_k(&store, "q", 3, Partition::WholeDay).unwrap().into_iter().map(|r| r.station_id).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert!(within_radius(&store, "q", 0.0, Partition::WholeDay).unwrap().is_empty());
        assert_eq!(within_radius(&store, "q", 5.0, Partition::WholeDay).unwrap().len(), 3);
        assert_eq!(
            within_radius(&store, "q", f64::INFINITY, Partition::WholeDay).unwrap(),
            nearest_k(&store, "q", store.stations().len() - 1, Partition::WholeDay).unwrap()
        );
    }

    #[test]
    fn store_rejects_mixed_versions_and_duplicates() {
        let a = fp("a", Partition::WholeDay, vec![1.0]);
        let mut b = fp("b", Partition::WholeDay, vec![1.0]);
        b.model_version = "v2".into();
        assert!(matches!(FingerprintStore::new(vec![a.clone(), b]), Err(RecommendError::VersionMismatch(..))));
        assert!(matches!(FingerprintStore::new(vec![a.clone(), a.clone()]), Err(RecommendError::Duplicate { .. })));
        let c = fp("c", Partition::WholeDay, vec![1.0, 2.0]);
        assert!(matches!(FingerprintStore::new(vec![a, c]), Err(RecommendError::Shape(_))));
    }

    #[test]
    fn row_format() {
        let info = |name: &str, genres: &[&str]| StationInfo { name: name.into(), genres: genres.iter().map(|g| g.to_string()).collect() };
        let rec = |name: &str, genres: &[&str], distance| {
            let i = info(name, genres);
            Recommendation { station_id: name.to_lowercase(), name: i.name, genres: i.genres, distance }
        };
        let row = format_row(
            &info("BR Klassik", &["Classical Music", "Special Music"]),
            &[
                rec("NDR Kultur", &["Classical Music", "Cultural"], 59.58),
                rec("HR2", &["Classical Music", "Cultural"], 60.81),
                rec("Classic FM", &["Classical Music", "News"], 60.93),
            ],
        );
        assert_eq!(
            row,
            "BR Klassik (Classical Music, Special Music) \
             | NDR Kultur (Classical Music, Cultural); distance: 59.58 \
             | HR2 (Classical Music, Cultural); distance: 60.81 \
             | Classic FM (Classical Music, News); distance: 60.93"
        );
    }
}

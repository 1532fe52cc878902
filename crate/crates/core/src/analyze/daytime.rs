use ndarray::{Array2, ArrayView1};

use super::{archetypal_analysis, ArchetypeModel, PcaProjection, Result};
use crate::fingerprint::{Fingerprint, Partition};
use crate::recommend::{distance, FingerprintStore};

/// Multiple of the root-mean-square sampling deviation used as the
/// stationary-noise bound.
pub const NOISE_Z: f64 = 3.0;

/// Stations within `radius` of an archetype in the 2-D PCA plane,
/// ascending by distance then station id.
pub fn archetype_neighborhood(
    model: &ArchetypeModel,
    projection: &PcaProjection,
    station_ids: &[String],
    index: usize,
    radius: f64,
) -> Vec<(String, f64)> {
    assert_eq!(station_ids.len(), projection.coords.nrows());
    let [ax, ay] = projection.project(model.archetypes.row(index));
    let mut out: Vec<(String, f64)> = station_ids
        .iter()
        .zip(projection.coords.rows())
        .map(|(id, c)| (id.clone(), ((c[0] - ax).powi(2) + (c[1] - ay).powi(2)).sqrt()))
        .filter(|(_, d)| *d <= radius)
        .collect();
    out.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    out
}

/// A station's fingerprints for each available partition, projected into
/// the shared PCA plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub station_id: String,
    /// In [`Partition::ALL`] order, whole day first.
    pub points: Vec<(Partition, [f64; 2])>,
    /// Fingerprint-space distance for every pair of available partitions.
    pub distances: Vec<(Partition, Partition, f64)>,
}

/// Trajectories of every station with a whole-day and at least one
/// time-of-day fingerprint, all mass-normalized. Other stations are skipped
/// with a warning.
pub fn daytime_trajectories(store: &FingerprintStore, projection: &PcaProjection) -> Vec<Trajectory> {
    let mut out = Vec::new();
    for station in store.stations() {
        let fps: Vec<&Fingerprint> = Partition::ALL.iter().filter_map(|&p| store.get(station, p)).collect();
        if fps.first().is_none_or(|f| f.partition != Partition::WholeDay) || fps.len() < 2 {
            log::warn!("station {station}: needs whole-day and a time-of-day fingerprint, skipped");
            continue;
        }
        if let Some(f) = fps.iter().find(|f| !f.is_normalized()) {
            log::warn!("station {station}: {} fingerprint is not normalized, skipped", f.partition);
            continue;
        }
        if fps[0].histogram.len() != projection.mean.len() {
            log::warn!("station {station}: fingerprint length does not match projection, skipped");
            continue;
        }
        let points = fps.iter().map(|f| (f.partition, projection.project(ArrayView1::from(&f.histogram[..])))).collect();
        let mut distances = Vec::new();
        for (i, a) in fps.iter().enumerate() {
            for b in &fps[i + 1..] {
                distances.push((a.partition, b.partition, distance(a, b).expect("normalized, same n")));
            }
        }
        out.push(Trajectory { station_id: station.to_string(), points, distances });
    }
    out
}

/// Archetypes fitted separately for one partition.
#[derive(Debug, Clone)]
pub struct DaytimeArchetypes {
    pub partition: Partition,
    pub station_ids: Vec<String>,
    pub model: ArchetypeModel,
    /// `k x 2` archetype positions in the shared plane.
    pub positions: Array2<f64>,
}

/// Independent archetypal analysis per partition, on the stations that
/// have every requested partition.
pub fn daytime_archetypes(
    store: &FingerprintStore,
    partitions: &[Partition],
    k: usize,
    seed: u64,
    projection: &PcaProjection,
) -> Result<Vec<DaytimeArchetypes>> {
    let stations: Vec<String> = store
        .stations()
        .into_iter()
        .filter(|s| partitions.iter().all(|&p| store.get(s, p).is_some_and(Fingerprint::is_normalized)))
        .map(str::to_string)
        .collect();
    let mut out = Vec::new();
    for &p in partitions {
        let x = Array2::from_shape_fn((stations.len(), store.n()), |(i, j)| {
            store.get(&stations[i], p).expect("filtered").histogram[j]
        });
        let model = archetypal_analysis(x.view(), k, seed)?;
        let positions = projection.project_rows(model.archetypes.view());
        out.push(DaytimeArchetypes { partition: p, station_ids: stations.clone(), model, positions });
    }
    Ok(out)
}

/// Bound on the distance between two normalized fingerprints of a station
/// whose snippets follow the same cluster distribution `profile` in both
/// partitions, built from `count_a` and `count_b` snippets.
///
/// Each normalized bin is `mass / count` times a multinomial count, so the
/// expected squared distance is
/// `mass^2 * sum_c p_c (1 - p_c) * (1/count_a + 1/count_b)`; the bound is
/// [`NOISE_Z`] times its square root.
pub fn sampling_noise_bound(profile: &[f64], count_a: usize, count_b: usize, mass: f64) -> f64 {
    let total: f64 = profile.iter().sum();
    let spread: f64 = profile.iter().map(|&p| p / total * (1.0 - p / total)).sum();
    let inv = 1.0 / count_a as f64 + 1.0 / count_b as f64;
    NOISE_Z * mass * (spread * inv).sqrt()
}

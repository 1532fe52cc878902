//! Archetypal analysis, PCA projection and day-time trajectories of
//! station fingerprints.

mod archetypes;
mod daytime;
mod export;
mod pca;

use std::ops::RangeInclusive;

use ndarray::Array2;
use thiserror::Error;

pub use archetypes::{
    archetypal_analysis, fit_from, furthest_hull, on_simplex, project_simplex, rss_scree, select_archetype_count,
    simplex_least_squares, ArchetypeModel, MAX_OUTER_ITERATIONS, RELATIVE_TOLERANCE,
};
pub use daytime::{
    archetype_neighborhood, daytime_archetypes, daytime_trajectories, sampling_noise_bound, DaytimeArchetypes, Trajectory,
    NOISE_Z,
};
pub use export::{export_plot_data, read_pca_points, render_svg, PlotArchetype, PlotData, PlotPoint, UNKNOWN_COLOR};
pub use pca::{pca_2d, PcaProjection};

use crate::fingerprint::Partition;
use crate::recommend::FingerprintStore;

pub type Result<T, E = AnalyzeError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum AnalyzeError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid archetype count: {0}")]
    InvalidK(String),

    #[error("scree needs at least 3 points, got {0}")]
    InsufficientScree(usize),

    #[error("need at least {needed} stations, got {got}")]
    TooFewStations { needed: usize, got: usize },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("csv: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct AnalysisOptions {
    /// Archetype counts for the scree; clipped below the station count.
    pub scree: RangeInclusive<usize>,
    /// Fixed archetype count; skips the scree when set.
    pub archetypes: Option<usize>,
    pub seed: u64,
    /// Neighborhood radius around each archetype in the PCA plane.
    pub radius: f64,
    /// Time-of-day partitions for the per-partition archetypes.
    pub partitions: Vec<Partition>,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions { scree: 2..=10, archetypes: None, seed: 0, radius: 150.0, partitions: Partition::TIMES_OF_DAY.to_vec() }
    }
}

/// Results of [`analyze_store`].
#[derive(Debug, Clone)]
pub struct Analysis {
    /// Stations with a whole-day fingerprint, sorted; rows of every matrix.
    pub station_ids: Vec<String>,
    pub genres: Vec<Vec<String>>,
    pub projection: PcaProjection,
    pub scree: Vec<(usize, f64)>,
    pub model: ArchetypeModel,
    /// Per whole-day archetype, stations within the radius.
    pub neighborhoods: Vec<Vec<(String, f64)>>,
    pub trajectories: Vec<Trajectory>,
    pub daytime: Vec<DaytimeArchetypes>,
}

/// Whole-day fingerprint matrix (stations sorted by id).
pub fn whole_day_matrix(store: &FingerprintStore) -> (Vec<String>, Array2<f64>) {
    let fps: Vec<_> = store.partition(Partition::WholeDay).collect();
    let x = Array2::from_shape_fn((fps.len(), store.n()), |(i, j)| fps[i].histogram[j]);
    (fps.iter().map(|f| f.station_id.clone()).collect(), x)
}

/// Full analysis of a store: PCA of whole-day fingerprints, scree and
/// elbow (unless the count is fixed), archetypes with their neighborhoods,
/// day-time trajectories and per-partition archetypes.
pub fn analyze_store(store: &FingerprintStore, opts: &AnalysisOptions) -> Result<Analysis> {
    let (station_ids, x) = whole_day_matrix(store);
    let m = station_ids.len();
    if m < 3 {
        return Err(AnalyzeError::TooFewStations { needed: 3, got: m });
    }
    let projection = pca_2d(x.view())?;
    let (scree, k) = match opts.archetypes {
        Some(k) => (Vec::new(), k),
        None => {
            let ks: Vec<usize> = opts.scree.clone().filter(|&k| k >= 2 && k < m).collect();
            let scree = rss_scree(x.view(), ks, opts.seed)?;
            let k = select_archetype_count(&scree)?;
            (scree, k)
        }
    };
    let model = archetypal_analysis(x.view(), k, opts.seed)?;
    let neighborhoods =
        (0..k).map(|i| archetype_neighborhood(&model, &projection, &station_ids, i, opts.radius)).collect();
    let trajectories = daytime_trajectories(store, &projection);

    let complete = store
        .stations()
        .into_iter()
        .filter(|s| opts.partitions.iter().all(|&p| store.get(s, p).is_some()))
        .count();
    let daytime = if opts.partitions.is_empty() {
        Vec::new()
    } else if complete > k {
        daytime_archetypes(store, &opts.partitions, k, opts.seed, &projection)?
    } else {
        log::warn!("{complete} stations have all requested partitions; per-partition archetypes skipped");
        Vec::new()
    };
    let genres = station_ids.iter().map(|s| store.info(s).genres).collect();
    Ok(Analysis { station_ids, genres, projection, scree, model, neighborhoods, trajectories, daytime })
}

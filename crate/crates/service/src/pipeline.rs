//! crawl -> spectrogram -> train -> encode -> fingerprint -> analyze, with
//! per-stage input digests so completed stages are skipped on rerun.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use stationprint_core::analyze::{analyze_store, export_plot_data, AnalysisOptions, PlotData};
use stationprint_core::collector::{
    crawl, load_catalog, parse_catalog, summarize_dataset, write_atomic, ClockMode, CrawlOptions, DatasetSummary,
    RecordingManifest, SnippetStore, StationRecord,
};
use stationprint_core::dsp::{
    mel_spectrogram, pcm_to_f32, read_archive, resample_mono, write_archive, ArchiveKind, ArchiveRecord,
};
use stationprint_core::embed::{
    encode_batch, read_embeddings, read_model, select_training_subset, train_autoencoder, write_embeddings, write_model,
    AutoencoderConfig, Embedding,
};
use stationprint_core::fingerprint::{
    fingerprint_embeddings, write_cluster_model, write_fingerprints, FingerprintOptions,
};
use stationprint_core::recommend::FingerprintStore;

use crate::client;
use crate::config::{CatalogSource, PipelineConfig};
use crate::version::{digest_parts, file_digest, StoreVersion};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Crawl,
    Spectrogram,
    Train,
    Encode,
    Fingerprint,
    Analyze,
}

impl Stage {
    pub const ALL: [Stage; 6] = [Stage::Crawl, Stage::Spectrogram, Stage::Train, Stage::Encode, Stage::Fingerprint, Stage::Analyze];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Crawl => "crawl",
            Stage::Spectrogram => "spectrogram",
            Stage::Train => "train",
            Stage::Encode => "encode",
            Stage::Fingerprint => "fingerprint",
            Stage::Analyze => "analyze",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
#[error("stage {stage} failed: {cause}")]
pub struct StageError {
    pub stage: Stage,
    pub cause: String,
}

fn fail(stage: Stage) -> impl Fn(&dyn fmt::Display) -> StageError {
    move |e| StageError { stage, cause: e.to_string() }
}

/// File layout under the work directory.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub root: PathBuf,
    pub snippets: PathBuf,
}

impl Artifacts {
    pub fn new(config: &PipelineConfig) -> Self {
        Artifacts { root: config.work_dir.clone(), snippets: config.snippet_dir.clone() }
    }

    pub fn at(root: impl Into<PathBuf>) -> Self {
        let root = root.into();
        Artifacts { snippets: root.join("snippets"), root }
    }

    pub fn catalog(&self) -> PathBuf {
        self.root.join("catalog.json")
    }
    pub fn spectrograms(&self) -> PathBuf {
        self.root.join("spectrograms.spa")
    }
    pub fn model(&self) -> PathBuf {
        self.root.join("autoencoder.bin")
    }
    pub fn embeddings(&self) -> PathBuf {
        self.root.join("embeddings.spa")
    }
    pub fn clusters(&self) -> PathBuf {
        self.root.join("clusters.json")
    }
    pub fn fingerprints(&self) -> PathBuf {
        self.root.join("fingerprints.jsonl")
    }
    pub fn version(&self) -> PathBuf {
        self.root.join("store_version.json")
    }
    pub fn analysis(&self) -> PathBuf {
        self.root.join("analysis")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }
    fn stamp(&self, stage: Stage) -> PathBuf {
        self.root.join("stamps").join(format!("{stage}.json"))
    }

    fn outputs(&self, stage: Stage) -> Vec<PathBuf> {
        match stage {
            Stage::Crawl => vec![self.catalog()],
            Stage::Spectrogram => vec![self.spectrograms()],
            Stage::Train => vec![self.model()],
            Stage::Encode => vec![self.embeddings()],
            Stage::Fingerprint => vec![self.clusters(), self.fingerprints(), self.version()],
            Stage::Analyze => ["pca_points.csv", "archetypes.csv", "scree.csv", "trajectories.csv", "plot.svg"]
                .iter()
                .map(|f| self.analysis().join(f))
                .collect(),
        }
    }
}

/// What a stage recorded about its last successful run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Stamp {
    pub input: String,
    pub info: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage: Stage,
    pub skipped: bool,
    pub seconds: f64,
    pub info: serde_json::Value,
}

/// Summary written to `report.json` after every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub stages: Vec<StageOutcome>,
    pub dataset: DatasetSummary,
    /// `total = 576 * complete + incomplete_snippets`.
    pub identity_holds: bool,
    pub model_version: String,
    pub summary_line: String,
}

impl RunReport {
    pub fn all_skipped(&self) -> bool {
        self.stages.iter().all(|s| s.skipped)
    }
}

/// Dataset line in the style "N snippets = 576 x C complete + I incomplete".
pub fn summary_line(d: &DatasetSummary) -> String {
    format!(
        "{} stations ({} complete, {} incomplete); {} snippets = 576 x {} + {}",
        d.stations, d.complete_stations, d.incomplete_stations, d.total_snippets, d.complete_stations, d.incomplete_snippets
    )
}

fn json_bytes(v: &impl Serialize) -> Vec<u8> {
    serde_json::to_vec(v).expect("serializable")
}

fn digest_file(stage: Stage, path: &Path) -> Result<String, StageError> {
    file_digest(path).map_err(|e| StageError { stage, cause: format!("{}: {e}", path.display()) })
}

/// Reads the catalog from a file or URL.
pub fn fetch_catalog(source: &CatalogSource) -> Result<Vec<StationRecord>, String> {
    match source {
        CatalogSource::File(p) => load_catalog(p).map_err(|e| format!("{}: {e}", p.display())),
        CatalogSource::Url(u) => {
            let resp = client::get(u).map_err(|e| format!("{u}: {e}"))?;
            if resp.status != 200 {
                return Err(format!("{u}: status {}", resp.status));
            }
            parse_catalog(&resp.text()).map_err(|e| format!("{u}: {e}"))
        }
    }
}

pub fn crawl_options(config: &PipelineConfig) -> CrawlOptions {
    let mut opts = CrawlOptions::new(config.day);
    opts.tz = config.timezone;
    opts.hours = config.hours.0..config.hours.1;
    opts.clock = if config.simulated_clock { ClockMode::Simulated } else { ClockMode::Real };
    opts.timeout = Duration::from_secs_f64(config.stream_timeout_s);
    opts
}

/// Autoencoder settings after applying config overrides.
pub fn autoencoder_config(config: &PipelineConfig) -> AutoencoderConfig {
    let mut c = config.profile.config(config.embed_seed);
    if let Some(e) = config.epochs {
        c.epochs = e;
    }
    if let Some(u) = config.units {
        c.units_per_direction = u;
    }
    c
}

fn max_samples(config: &PipelineConfig) -> Option<usize> {
    config.max_samples.or(config.profile.max_samples())
}

/// Mel spectrograms of every recorded snippet, ordered by station and time.
pub fn spectrograms_from_store(
    store: &SnippetStore,
    manifests: &[RecordingManifest],
    params: &stationprint_core::dsp::SpectrogramParams,
) -> Result<Vec<ArchiveRecord>, String> {
    let mut records = Vec::new();
    for m in manifests {
        for slot in m.recorded_slots() {
            let snippet = store.read_snippet(&m.station_id, slot).map_err(|e| format!("{} {slot}: {e}", m.station_id))?;
            let mut pcm = pcm_to_f32(&snippet.samples);
            if snippet.sample_rate != params.target_rate {
                pcm = resample_mono(&pcm, snippet.sample_rate, params.target_rate);
            }
            let spec = mel_spectrogram(&pcm, params).map_err(|e| format!("{} {slot}: {e}", m.station_id))?;
            records.push(ArchiveRecord {
                station_id: m.station_id.clone(),
                timestamp: snippet.capture_time,
                params: *params,
                values: spec.values,
            });
        }
    }
    records.sort_by(|a, b| (&a.station_id, a.timestamp).cmp(&(&b.station_id, b.timestamp)));
    Ok(records)
}

struct Runner {
    art: Artifacts,
    outcomes: Vec<StageOutcome>,
}

impl Runner {
    fn read_stamp(&self, stage: Stage) -> Option<Stamp> {
        let bytes = std::fs::read(self.art.stamp(stage)).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    /// Runs `body` unless the stamp matches `input` and all outputs exist.
    fn stage(
        &mut self,
        stage: Stage,
        input: String,
        body: impl FnOnce(&Artifacts) -> Result<serde_json::Value, StageError>,
    ) -> Result<serde_json::Value, StageError> {
        let start = Instant::now();
        if let Some(stamp) = self.read_stamp(stage) {
            if stamp.input == input && self.art.outputs(stage).iter().all(|p| p.exists()) {
                log::info!("{stage}: up to date, skipped");
                self.outcomes.push(StageOutcome { stage, skipped: true, seconds: 0.0, info: stamp.info.clone() });
                return Ok(stamp.info);
            }
        }
        log::info!("{stage}: running");
        let info = body(&self.art)?;
        let stamp = Stamp { input, info: info.clone() };
        let path = self.art.stamp(stage);
        std::fs::create_dir_all(path.parent().expect("stamp dir")).map_err(|e| fail(stage)(&e))?;
        write_atomic(&path, &serde_json::to_vec_pretty(&stamp).expect("stamp serializes")).map_err(|e| fail(stage)(&e))?;
        let seconds = start.elapsed().as_secs_f64();
        log::info!("{stage}: done in {seconds:.1}s");
        self.outcomes.push(StageOutcome { stage, skipped: false, seconds, info: info.clone() });
        Ok(info)
    }
}

/// Runs every stage in order. Each stage is skipped when its outputs exist
/// and were produced from identical inputs; the report is always rewritten.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunReport, StageError> {
    let art = Artifacts::new(config);
    std::fs::create_dir_all(&art.root).map_err(|e| fail(Stage::Crawl)(&e))?;
    let mut run = Runner { art: art.clone(), outcomes: Vec::new() };
    let snippets = SnippetStore::new(&art.snippets);

    // crawl
    let catalog = fetch_catalog(&config.catalog).map_err(|e| fail(Stage::Crawl)(&e))?;
    let opts = crawl_options(config);
    let crawl_input = digest_parts([
        &json_bytes(&catalog)[..],
        config.day.to_string().as_bytes(),
        &config.timezone.local_minus_utc().to_le_bytes(),
        &config.hours.0.to_le_bytes(),
        &config.hours.1.to_le_bytes(),
    ]);
    run.stage(Stage::Crawl, crawl_input, |art| {
        let manifests = crawl(&catalog, &snippets, &opts).map_err(|e| fail(Stage::Crawl)(&e))?;
        write_atomic(&art.catalog(), &serde_json::to_vec_pretty(&catalog).expect("catalog serializes"))
            .map_err(|e| fail(Stage::Crawl)(&e))?;
        let recorded: usize = manifests.iter().map(|m| m.snippet_count).sum();
        Ok(serde_json::json!({ "stations": manifests.len(), "snippets": recorded }))
    })?;
    let manifests: Vec<RecordingManifest> = snippets
        .manifests()
        .map_err(|e| fail(Stage::Crawl)(&e))?
        .into_iter()
        .filter(|m| catalog.iter().any(|s| s.station_id == m.station_id))
        .collect();
    let dataset = summarize_dataset(&manifests);

    // spectrogram
    let spec_input = digest_parts([&json_bytes(&manifests)[..], &json_bytes(&config.spectrogram)]);
    run.stage(Stage::Spectrogram, spec_input, |art| {
        let records = spectrograms_from_store(&snippets, &manifests, &config.spectrogram).map_err(|e| fail(Stage::Spectrogram)(&e))?;
        if records.is_empty() {
            return Err(fail(Stage::Spectrogram)(&"no snippets were recorded"));
        }
        write_archive(art.spectrograms(), ArchiveKind::Spectrogram, &records).map_err(|e| fail(Stage::Spectrogram)(&e))?;
        Ok(serde_json::json!({ "spectrograms": records.len() }))
    })?;

    // train
    let ae = autoencoder_config(config);
    let cap = max_samples(config);
    let spec_digest = digest_file(Stage::Train, &art.spectrograms())?;
    let train_input = digest_parts([spec_digest.as_bytes(), &json_bytes(&ae), &json_bytes(&cap)]);
    run.stage(Stage::Train, train_input, |art| {
        let (_, records) = read_archive(art.spectrograms()).map_err(|e| fail(Stage::Train)(&e))?;
        let subset = select_training_subset(records.len(), cap, ae.seed);
        let views: Vec<ArrayView2<f32>> = subset.iter().map(|&i| records[i].values.view()).collect();
        let model = train_autoencoder(&views, &ae).map_err(|e| fail(Stage::Train)(&e))?;
        write_model(art.model(), &model).map_err(|e| fail(Stage::Train)(&e))?;
        Ok(serde_json::json!({ "samples": views.len(), "final_loss": model.final_loss() }))
    })?;

    // encode
    let model_digest = digest_file(Stage::Encode, &art.model())?;
    let encode_input = digest_parts([model_digest.as_bytes(), spec_digest.as_bytes()]);
    run.stage(Stage::Encode, encode_input, |art| {
        let model = read_model(art.model()).map_err(|e| fail(Stage::Encode)(&e))?;
        let (_, records) = read_archive(art.spectrograms()).map_err(|e| fail(Stage::Encode)(&e))?;
        let views: Vec<ArrayView2<f32>> = records.iter().map(|r| r.values.view()).collect();
        let vectors = encode_batch(&model, &views).map_err(|e| fail(Stage::Encode)(&e))?;
        let embeddings: Vec<Embedding> = records
            .iter()
            .zip(vectors.rows())
            .map(|(r, v)| Embedding { station_id: r.station_id.clone(), timestamp: r.timestamp, vector: v.to_vec() })
            .collect();
        write_embeddings(art.embeddings(), &embeddings, &config.spectrogram).map_err(|e| fail(Stage::Encode)(&e))?;
        Ok(serde_json::json!({ "embeddings": embeddings.len(), "dim": vectors.ncols() }))
    })?;

    // fingerprint
    let emb_digest = digest_file(Stage::Fingerprint, &art.embeddings())?;
    let fp_params = serde_json::json!({
        "k_min": config.cluster_k.start(),
        "k_max": config.cluster_k.end(),
        "seed": config.fingerprint_seed,
        "min_snippets": config.min_snippets,
        "tz": config.timezone.local_minus_utc(),
    });
    let fp_input = digest_parts([emb_digest.as_bytes(), &json_bytes(&fp_params)]);
    let fp_info = run.stage(Stage::Fingerprint, fp_input, |art| {
        let embeddings = read_embeddings(art.embeddings()).map_err(|e| fail(Stage::Fingerprint)(&e))?;
        let opts = FingerprintOptions {
            k_min: *config.cluster_k.start(),
            k_max: *config.cluster_k.end(),
            seed: config.fingerprint_seed,
            tz: config.timezone,
            min_snippets: config.min_snippets,
            model_version: String::new(),
        };
        let run = fingerprint_embeddings(&embeddings, &opts).map_err(|e| fail(Stage::Fingerprint)(&e))?;
        write_cluster_model(art.clusters(), &run.selection.model).map_err(|e| fail(Stage::Fingerprint)(&e))?;
        let version = StoreVersion::new(
            model_digest.clone(),
            digest_file(Stage::Fingerprint, &art.clusters())?,
            &serde_json::json!({ "fingerprint": fp_params, "spectrogram": config.spectrogram }),
        );
        let model_version = version.model_version();
        let mut fps = run.fingerprints;
        for fp in &mut fps {
            fp.model_version = model_version.clone();
        }
        write_fingerprints(art.fingerprints(), &fps).map_err(|e| fail(Stage::Fingerprint)(&e))?;
        write_atomic(&art.version(), &serde_json::to_vec_pretty(&version).expect("version serializes"))
            .map_err(|e| fail(Stage::Fingerprint)(&e))?;
        Ok(serde_json::json!({
            "clusters": run.selection.best,
            "fingerprints": fps.len(),
            "skipped_stations": run.skipped,
            "model_version": model_version,
        }))
    })?;

    // analyze
    let fps_digest = digest_file(Stage::Analyze, &art.fingerprints())?;
    let analyze_params = serde_json::json!({
        "scree": [config.scree.start(), config.scree.end()],
        "archetypes": config.archetypes,
        "radius": config.radius,
        "seed": config.analysis_seed,
        "partitions": config.partitions,
    });
    let analyze_input = digest_parts([fps_digest.as_bytes(), &json_bytes(&catalog), &json_bytes(&analyze_params)]);
    run.stage(Stage::Analyze, analyze_input, |art| {
        let store = FingerprintStore::load(art.fingerprints()).map_err(|e| fail(Stage::Analyze)(&e))?.with_catalog(&catalog);
        let opts = AnalysisOptions {
            scree: config.scree.clone(),
            archetypes: config.archetypes,
            seed: config.analysis_seed,
            radius: config.radius,
            partitions: config.partitions.clone(),
        };
        let analysis = analyze_store(&store, &opts).map_err(|e| fail(Stage::Analyze)(&e))?;
        export_plot_data(&PlotData::from(&analysis), art.analysis()).map_err(|e| fail(Stage::Analyze)(&e))?;
        Ok(serde_json::json!({ "stations": analysis.station_ids.len(), "archetypes": analysis.model.k(), "scree": analysis.scree }))
    })?;

    let report = RunReport {
        stages: run.outcomes,
        dataset,
        identity_holds: dataset.identity_holds(),
        model_version: fp_info["model_version"].as_str().unwrap_or_default().to_string(),
        summary_line: summary_line(&dataset),
    };
    write_atomic(&art.report(), &serde_json::to_vec_pretty(&report).expect("report serializes"))
        .map_err(|e| fail(Stage::Analyze)(&e))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_line_shape() {
        let d = DatasetSummary {
            stations: 461,
            complete_stations: 431,
            incomplete_stations: 30,
            total_snippets: 266_239,
            incomplete_snippets: 17_983,
            surplus_snippets: 0,
        };
        assert!(d.identity_holds());
        assert_eq!(summary_line(&d), "461 stations (431 complete, 30 incomplete); 266239 snippets = 576 x 431 + 17983");
    }

    #[test]
    fn stage_order() {
        let names: Vec<&str> = Stage::ALL.iter().map(|s| s.as_str()).collect();
        assert_eq!(names, ["crawl", "spectrogram", "train", "encode", "fingerprint", "analyze"]);
    }
}

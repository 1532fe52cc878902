use std::net::SocketAddr;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use chrono::{FixedOffset, NaiveDate};
use clap::{Args, Parser, Subcommand};
use ndarray::ArrayView2;

use stationprint_core::analyze::{analyze_store, export_plot_data, AnalysisOptions, PlotData};
use stationprint_core::collector::{crawl, summarize_dataset, ClockMode, SnippetStore, StationRecord};
use stationprint_core::dsp::{read_archive, write_archive, ArchiveKind, SpectrogramParams};
use stationprint_core::embed::{
    encode_batch, read_embeddings, read_model, select_training_subset, train_autoencoder, write_embeddings,
    write_model, Embedding, Profile,
};
use stationprint_core::fingerprint::{fingerprint_embeddings, write_cluster_model, write_fingerprints, FingerprintOptions};
use stationprint_core::recommend::{format_row, nearest_k, within_radius, FingerprintStore};
use stationprint_core::Partition;
use stationprint_service::config::{CatalogSource, K_BOUNDS};
use stationprint_service::pipeline::{crawl_options, fetch_catalog, spectrograms_from_store, summary_line};
use stationprint_service::version::file_digest;
use stationprint_service::{
    api, load_fixtures, run_pipeline, write_synthetic_fixtures, AppState, MockIcyServer, PipelineConfig, StoreVersion,
    EXIT_CONFIG, EXIT_STAGE,
};

#[derive(Parser)]
#[command(name = "stationprint", version, about = "Content-based radio station fingerprints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Record scheduled 5 s snippets from every catalog station.
    Crawl(CrawlArgs),
    /// Turn a snippet store into a mel-spectrogram archive.
    Spectrogram(SpectrogramArgs),
    /// Train the sequence autoencoder on a spectrogram archive.
    Train(TrainArgs),
    /// Encode spectrograms into embeddings.
    Encode(EncodeArgs),
    /// Cluster embeddings and write per-station fingerprints.
    Fingerprint(FingerprintArgs),
    /// Nearest stations to one station, as JSON.
    Recommend(RecommendArgs),
    /// Archetypes, PCA projection and day-time trajectories.
    Analyze(AnalyzeArgs),
    /// Serve the recommendation API over a pipeline work directory.
    Serve(ServeArgs),
    /// Serve WAV fixtures as ICY streams plus a `/services` catalog.
    MockServer(MockArgs),
    /// Run every pipeline stage, skipping those that are up to date.
    Run(RunArgs),
}

#[derive(Args)]
struct CrawlArgs {
    /// Catalog JSON file.
    #[arg(long, required_unless_present = "mock_server", conflicts_with = "mock_server")]
    catalog: Option<PathBuf>,
    /// Fetch the catalog from a mock server at this address.
    #[arg(long)]
    mock_server: Option<String>,
    /// Snippet store root.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "2019-11-04")]
    day: NaiveDate,
    /// Local hours to record, `a-b`.
    #[arg(long, default_value = "0-24", value_parser = parse_hours)]
    hours: (u32, u32),
    #[arg(long, default_value = "+01:00", value_parser = parse_offset)]
    tz: FixedOffset,
    /// Visit slots back to back instead of waiting for the wall clock.
    #[arg(long)]
    simulated_clock: bool,
    #[arg(long, default_value_t = 10.0)]
    timeout_s: f64,
}

#[derive(Args)]
struct SpectrogramArgs {
    /// Snippet store root.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "desk", value_parser = parse_profile)]
    profile: Profile,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    units: Option<usize>,
    #[arg(long)]
    max_samples: Option<usize>,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FingerprintArgs {
    #[arg(long)]
    embeddings: PathBuf,
    /// Where to write the cluster model.
    #[arg(long)]
    model_out: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "9:16", value_parser = parse_k_range)]
    k_range: RangeInclusive<usize>,
    #[arg(long, default_value_t = 576)]
    min_snippets: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "+01:00", value_parser = parse_offset)]
    tz: FixedOffset,
}

#[derive(Args)]
struct RecommendArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    station: String,
    #[arg(long, conflicts_with = "radius")]
    k: Option<usize>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long, default_value = "whole_day", value_parser = parse_partition)]
    partition: Partition,
    /// Catalog for names and genres.
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Print a plain table row instead of JSON.
    #[arg(long)]
    table: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long, conflicts_with = "scree")]
    archetypes: Option<usize>,
    #[arg(long, default_value = "2:10", value_parser = parse_k_range)]
    scree: RangeInclusive<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 150.0)]
    radius: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ServeArgs {
    /// Pipeline config; its work directory and bind address are used.
    #[arg(long, required_unless_present = "work")]
    config: Option<PathBuf>,
    /// Work directory to serve when no config is given.
    #[arg(long)]
    work: Option<PathBuf>,
    #[arg(long)]
    bind: Option<SocketAddr>,
}

#[derive(Args)]
struct MockArgs {
    /// Directory holding `stations.json` and the WAV files.
    #[arg(long)]
    fixtures: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8000")]
    bind: SocketAddr,
    /// Write this many synthetic stations into the directory first.
    #[arg(long)]
    synthetic: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
}

enum Failure {
    Config(anyhow::Error),
    Stage(anyhow::Error),
}

type Result<T> = std::result::Result<T, Failure>;

trait OrStage<T> {
    fn stage(self) -> Result<T>;
}

impl<T, E: Into<anyhow::Error>> OrStage<T> for std::result::Result<T, E> {
    fn stage(self) -> Result<T> {
        self.map_err(|e| Failure::Stage(e.into()))
    }
}

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn parse_hours(s: &str) -> std::result::Result<(u32, u32), String> {
    let (a, b) = s.split_once('-').ok_or("expected a-b")?;
    let (a, b): (u32, u32) = (a.parse().map_err(|_| "bad start hour")?, b.parse().map_err(|_| "bad end hour")?);
    if a >= b || b > 24 {
        return Err(format!("{a}-{b} is not a range within 0-24"));
    }
    Ok((a, b))
}

fn parse_offset(s: &str) -> std::result::Result<FixedOffset, String> {
    if s.eq_ignore_ascii_case("utc") {
        return Ok(FixedOffset::east_opt(0).expect("zero offset"));
    }
    s.parse().map_err(|e| format!("expected an offset like +01:00: {e}"))
}

fn parse_k_range(s: &str) -> std::result::Result<RangeInclusive<usize>, String> {
    let (a, b) = s.split_once([':', '-']).ok_or("expected a:b")?;
    let (a, b): (usize, usize) = (a.parse().map_err(|_| "bad lower bound")?, b.parse().map_err(|_| "bad upper bound")?);
    if a > b || !K_BOUNDS.contains(&a) || !K_BOUNDS.contains(&b) {
        return Err(format!("{a}:{b} must be non-empty and within {}:{}", K_BOUNDS.start(), K_BOUNDS.end()));
    }
    Ok(a..=b)
}

fn parse_profile(s: &str) -> std::result::Result<Profile, String> {
    s.parse().map_err(|e: stationprint_core::embed::EmbedError| e.to_string())
}

fn parse_partition(s: &str) -> std::result::Result<Partition, String> {
    s.parse().map_err(|e: stationprint_core::fingerprint::FingerprintError| e.to_string())
}

fn load_catalog_opt(path: Option<&Path>) -> Result<Vec<StationRecord>> {
    match path {
        Some(p) => fetch_catalog(&CatalogSource::File(p.to_path_buf())).map_err(|e| config_err(anyhow!(e))),
        None => Ok(Vec::new()),
    }
}

fn cmd_crawl(a: CrawlArgs) -> Result<()> {
    let source = match (a.catalog, a.mock_server) {
        (Some(p), _) => CatalogSource::File(p),
        (None, Some(addr)) => CatalogSource::Url(format!("http://{addr}/services")),
        (None, None) => unreachable!("clap requires one"),
    };
    let catalog = fetch_catalog(&source).map_err(|e| config_err(anyhow!(e)))?;
    let config = PipelineConfig {
        day: a.day,
        hours: a.hours,
        timezone: a.tz,
        simulated_clock: a.simulated_clock,
        stream_timeout_s: a.timeout_s,
        ..PipelineConfig::default()
    };
    let mut opts = crawl_options(&config);
    opts.clock = if a.simulated_clock { ClockMode::Simulated } else { ClockMode::Real };
    let manifests = crawl(&catalog, &SnippetStore::new(&a.out), &opts).stage()?;
    println!("{}", summary_line(&summarize_dataset(&manifests)));
    Ok(())
}

fn cmd_spectrogram(a: SpectrogramArgs) -> Result<()> {
    let store = SnippetStore::new(&a.input);
    let manifests = store.manifests().stage()?;
    let params = SpectrogramParams::default();
    let records = spectrograms_from_store(&store, &manifests, &params).map_err(|e| Failure::Stage(anyhow!(e)))?;
    write_archive(&a.out, ArchiveKind::Spectrogram, &records).stage()?;
    println!("{} spectrograms", records.len());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut config = a.profile.config(a.seed);
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    if let Some(u) = a.units {
        config.units_per_direction = u;
    }
    let (_, records) = read_archive(&a.input).stage()?;
    let subset = select_training_subset(records.len(), a.max_samples.or(a.profile.max_samples()), a.seed);
    let views: Vec<ArrayView2<f32>> = subset.iter().map(|&i| records[i].values.view()).collect();
    let model = train_autoencoder(&views, &config).stage()?;
    write_model(&a.out, &model).stage()?;
    println!("trained on {} samples, final loss {:?}", views.len(), model.final_loss());
    Ok(())
}

fn cmd_encode(a: EncodeArgs) -> Result<()> {
    let model = read_model(&a.model).stage()?;
    let (_, records) = read_archive(&a.input).stage()?;
    let views: Vec<ArrayView2<f32>> = records.iter().map(|r| r.values.view()).collect();
    let vectors = encode_batch(&model, &views).stage()?;
    let embeddings: Vec<Embedding> = records
        .iter()
        .zip(vectors.rows())
        .map(|(r, v)| Embedding { station_id: r.station_id.clone(), timestamp: r.timestamp, vector: v.to_vec() })
        .collect();
    let params = records.first().map(|r| r.params).unwrap_or_default();
    write_embeddings(&a.out, &embeddings, &params).stage()?;
    println!("{} embeddings of dimension {}", embeddings.len(), vectors.ncols());
    Ok(())
}

fn cmd_fingerprint(a: FingerprintArgs) -> Result<()> {
    let embeddings = read_embeddings(&a.embeddings).stage()?;
    let opts = FingerprintOptions {
        k_min: *a.k_range.start(),
        k_max: *a.k_range.end(),
        seed: a.seed,
        tz: a.tz,
        min_snippets: a.min_snippets,
        model_version: String::new(),
    };
    let run = fingerprint_embeddings(&embeddings, &opts).stage()?;
    write_cluster_model(&a.model_out, &run.selection.model).stage()?;
    let params = serde_json::json!({
        "k_min": opts.k_min, "k_max": opts.k_max, "seed": opts.seed,
        "min_snippets": opts.min_snippets, "tz": opts.tz.local_minus_utc(),
    });
    let version = StoreVersion::new(file_digest(&a.embeddings).stage()?, file_digest(&a.model_out).stage()?, &params);
    let mut fps = run.fingerprints;
    for fp in &mut fps {
        fp.model_version = version.model_version();
    }
    write_fingerprints(&a.out, &fps).stage()?;
    println!("k = {}, {} fingerprints, version {version}", run.selection.best, fps.len());
    if !run.skipped.is_empty() {
        println!("skipped (too few snippets): {}", run.skipped.join(", "));
    }
    Ok(())
}

fn cmd_recommend(a: RecommendArgs) -> Result<()> {
    let catalog = load_catalog_opt(a.catalog.as_deref())?;
    let store = FingerprintStore::load(&a.store).stage()?.with_catalog(&catalog);
    let results = match a.radius {
        Some(r) => within_radius(&store, &a.station, r, a.partition),
        None => nearest_k(&store, &a.station, a.k.unwrap_or(api::DEFAULT_K), a.partition),
    }
    .map_err(|e| config_err(e))?;
    if a.table {
        println!("{}", format_row(&store.info(&a.station), &results));
    } else {
        println!("{}", serde_json::to_string_pretty(&results).expect("serializes"));
    }
    Ok(())
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<()> {
    let catalog = load_catalog_opt(a.catalog.as_deref())?;
    let store = FingerprintStore::load(&a.store).stage()?.with_catalog(&catalog);
    let opts = AnalysisOptions { scree: a.scree, archetypes: a.archetypes, seed: a.seed, radius: a.radius, ..AnalysisOptions::default() };
    let analysis = analyze_store(&store, &opts).stage()?;
    export_plot_data(&PlotData::from(&analysis), &a.out).stage()?;
    for (k, rss) in &analysis.scree {
        println!("k={k} rss={rss:.3}");
    }
    println!("{} archetypes over {} stations", analysis.model.k(), analysis.station_ids.len());
    Ok(())
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    tokio::runtime::Runtime::new().context("starting the async runtime").map_err(Failure::Stage)
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    let (work, mut bind, token) = match &a.config {
        Some(path) => {
            let c = PipelineConfig::load(Some(path)).map_err(config_err)?;
            (c.work_dir, c.bind, c.admin_token)
        }
        None => (a.work.clone().expect("clap requires one"), PipelineConfig::default().bind, None),
    };
    if let Some(b) = a.bind {
        bind = b;
    }
    let state = AppState::from_work_dir(work, token);
    runtime()?.block_on(api::serve(state, bind)).stage()
}

fn cmd_mock(a: MockArgs) -> Result<()> {
    if let Some(n) = a.synthetic {
        write_synthetic_fixtures(&a.fixtures, n, 16_000, a.seed).stage()?;
    }
    let stations = load_fixtures(&a.fixtures).with_context(|| format!("loading {}", a.fixtures.display())).map_err(config_err)?;
    runtime()?.block_on(async {
        let server = MockIcyServer::start(stations, a.bind).await.stage()?;
        println!("catalog at {}", server.catalog_url());
        tokio::signal::ctrl_c().await.stage()
    })
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let config = PipelineConfig::load(a.config.as_deref()).map_err(config_err)?;
    let report = run_pipeline(&config).stage()?;
    for s in &report.stages {
        println!("{:<12} {}", s.stage.as_str(), if s.skipped { "skipped".to_string() } else { format!("{:.1}s", s.seconds) });
    }
    println!("{}", report.summary_line);
    println!("model version {}", report.model_version);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Crawl(a) => cmd_crawl(a),
        Command::Spectrogram(a) => cmd_spectrogram(a),
        Command::Train(a) => cmd_train(a),
        Command::Encode(a) => cmd_encode(a),
        Command::Fingerprint(a) => cmd_fingerprint(a),
        Command::Recommend(a) => cmd_recommend(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Serve(a) => cmd_serve(a),
        Command::MockServer(a) => cmd_mock(a),
        Command::Run(a) => cmd_run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(EXIT_CONFIG as u8)
        }
        Err(Failure::Stage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_STAGE as u8)
        }
    }
}

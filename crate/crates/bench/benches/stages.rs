use chrono::{FixedOffset, NaiveDate};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stationprint_core::analyze::archetypal_analysis;
use stationprint_core::collector::{build_schedule, demux_icy};
use stationprint_core::dsp::{mel_spectrogram, SpectrogramParams};
use stationprint_core::embed::{encode_batch, train_autoencoder, AutoencoderConfig};
use stationprint_core::fingerprint::{fit_kmeans, Partition};
use stationprint_core::recommend::{nearest_k, FingerprintStore};
use stationprint_core::synth::{gaussian_blobs, genre_fingerprints, spectrogram_corpus};

fn collector(c: &mut Criterion) {
    let day = NaiveDate::from_ymd_opt(2019, 11, 4).unwrap();
    let tz = FixedOffset::east_opt(3600).unwrap();
    c.bench_function("schedule/day", |b| b.iter(|| build_schedule(day, tz)));

    let metaint = 16_000;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut stream = Vec::new();
    for _ in 0..64 {
        stream.extend((0..metaint).map(|_| rng.random::<u8>()));
        stream.push(0);
    }
    c.bench_function("demux/1MB", |b| b.iter(|| demux_icy(&stream, metaint).unwrap()));
}

fn dsp(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let samples: Vec<f32> = (0..80_000).map(|_| rng.random_range(-0.5..0.5)).collect();
    let p = SpectrogramParams::default();
    c.bench_function("spectrogram/5s", |b| b.iter(|| mel_spectrogram(&samples, &p).unwrap()));
}

fn embed(c: &mut Criterion) {
    let corpus = spectrogram_corpus(2, &SpectrogramParams::default(), 3);
    let views: Vec<_> = corpus.iter().map(|(_, s)| s.values.view()).collect();
    let config = AutoencoderConfig { units_per_direction: 32, epochs: 1, batch_size: 2, ..Default::default() };
    let model = train_autoencoder(&views, &config).unwrap();
    let one = &views[..1];
    c.bench_function("encode/1 snippet, 2x32", |b| b.iter(|| encode_batch(&model, one).unwrap()));
}

fn fingerprint(c: &mut Criterion) {
    let (pts, _, _) = gaussian_blobs(11, 400, 8, 30.0, 1.0, 4);
    let mut g = c.benchmark_group("kmeans");
    g.sample_size(10);
    g.bench_function("4400x8 k=11", |b| b.iter(|| fit_kmeans(pts.view(), 11, 0).unwrap()));
    g.finish();
}

fn recommend_and_analyze(c: &mut Criterion) {
    let (fps, _) = genre_fingerprints(5, 100, 11, 5);
    let x = Array2::from_shape_fn((fps.len(), 11), |(i, j)| fps[i].histogram[j]);
    let store = FingerprintStore::new(fps).unwrap();
    let id = store.stations()[0].to_string();
    c.bench_function("nearest_k/500 stations", |b| {
        b.iter(|| nearest_k(&store, &id, 3, Partition::WholeDay).unwrap())
    });

    let mut g = c.benchmark_group("archetypes");
    g.sample_size(10);
    g.bench_function("500x11 k=4", |b| {
        b.iter_batched(|| x.clone(), |x| archetypal_analysis(x.view(), 4, 0).unwrap(), BatchSize::SmallInput)
    });
    g.finish();
}

criterion_group!(benches, collector, dsp, embed, fingerprint, recommend_and_analyze);
criterion_main!(benches);

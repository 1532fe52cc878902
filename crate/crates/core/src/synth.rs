//! Seeded synthetic data: audio classes, planted clusters and convex-hull
//! point sets. Used by tests, benchmarks and the mock stream server.

use std::f64::consts::PI;

use chrono::{DateTime, FixedOffset, NaiveDate, Utc};
use ndarray::{Array1, Array2};
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};

use crate::collector::{build_schedule, SLOTS_PER_DAY};
use crate::dsp::{mel_spectrogram, MelSpectrogram, SpectrogramParams};
use crate::fingerprint::{build_fingerprint, Fingerprint, Partition};

/// Sound classes of the synthetic corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SoundClass {
    Tone,
    Noise,
    Chirp,
}

impl SoundClass {
    pub const ALL: [SoundClass; 3] = [SoundClass::Tone, SoundClass::Noise, SoundClass::Chirp];

    /// One randomized example of this class, `len` samples at `rate`.
    pub fn render(self, rate: u32, len: usize, rng: &mut impl Rng) -> Vec<f32> {
        let r = rate as f64;
        let amp = rng.random_range(0.2..0.8);
        match self {
            SoundClass::Tone => {
                let f = rng.random_range(200.0..2000.0);
                let phase = rng.random_range(0.0..2.0 * PI);
                (0..len).map(|n| (amp * (2.0 * PI * f * n as f64 / r + phase).sin()) as f32).collect()
            }
            SoundClass::Noise => {
                // white noise through a random one-pole low-pass
                let a = rng.random_range(0.0..0.9);
                let mut y = 0.0;
                (0..len)
                    .map(|_| {
                        y = a * y + (1.0 - a) * rng.random_range(-1.0..1.0);
                        (amp * y) as f32
                    })
                    .collect()
            }
            SoundClass::Chirp => {
                let f0 = rng.random_range(100.0..600.0);
                let f1 = rng.random_range(3000.0..6000.0);
                let dur = len as f64 / r;
                let k = (f1 - f0) / dur;
                (0..len)
                    .map(|n| {
                        let t = n as f64 / r;
                        (amp * (2.0 * PI * (f0 * t + 0.5 * k * t * t)).sin()) as f32
                    })
                    .collect()
            }
        }
    }
}

/// `per_class` spectrograms of each [`SoundClass`], interleaved by class.
pub fn spectrogram_corpus(per_class: usize, params: &SpectrogramParams, seed: u64) -> Vec<(SoundClass, MelSpectrogram)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = params.snippet_len();
    let mut out = Vec::with_capacity(per_class * 3);
    for _ in 0..per_class {
        for class in SoundClass::ALL {
            let audio = class.render(params.target_rate, len, &mut rng);
            out.push((class, mel_spectrogram(&audio, params).expect("valid params")));
        }
    }
    out
}

/// Isotropic Gaussian blobs with centers drawn uniformly from
/// `[-separation, separation]^dim`. Returns points, labels and centers.
pub fn gaussian_blobs(
    clusters: usize,
    per_cluster: usize,
    dim: usize,
    separation: f64,
    spread: f64,
    seed: u64,
) -> (Array2<f64>, Vec<usize>, Array2<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = Array2::from_shape_simple_fn((clusters, dim), || {
        if separation > 0.0 {
            rng.random_range(-separation..separation)
        } else {
            0.0
        }
    });
    let normal = Normal::new(0.0, spread).expect("spread is finite");
    let n = clusters * per_cluster;
    let mut points = Array2::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % clusters;
        for j in 0..dim {
            points[[i, j]] = centers[[c, j]] + normal.sample(&mut rng);
        }
        labels.push(c);
    }
    (points, labels, centers)
}

/// Uniform draw from the probability simplex of dimension `k`.
pub fn simplex_point(k: usize, rng: &mut impl Rng) -> Array1<f64> {
    let mut w: Array1<f64> = (0..k).map(|_| -rng.random_range(f64::EPSILON..1.0).ln()).collect();
    let s = w.sum();
    w /= s;
    w
}

/// Points inside the convex hull of `vertices` (rows), plus the vertices
/// themselves as the first rows. Mixture weights are symmetric Dirichlet
/// with the given concentration; 1 is uniform over the hull, below 1 the
/// points crowd toward the vertices.
pub fn hull_points(vertices: &Array2<f64>, interior: usize, concentration: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = Gamma::new(concentration, 1.0).expect("positive concentration");
    let (k, dim) = vertices.dim();
    let mut x = Array2::zeros((k + interior, dim));
    x.slice_mut(ndarray::s![..k, ..]).assign(vertices);
    for i in 0..interior {
        let mut w: Array1<f64> = (0..k).map(|_| gamma.sample(&mut rng)).collect();
        let s = w.sum();
        if s > 0.0 {
            w /= s;
        } else {
            w = simplex_point(k, &mut rng);
        }
        x.row_mut(k + i).assign(&w.dot(vertices));
    }
    x
}

/// Cluster-usage profile concentrated on a few random clusters.
pub fn peaked_profile(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let normal = Normal::<f64>::new(0.0, 1.5).expect("finite");
    let w: Vec<f64> = (0..n).map(|_| normal.sample(rng).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// `count` cluster labels drawn independently from `profile`.
pub fn sample_labels(profile: &[f64], count: usize, rng: &mut impl Rng) -> Vec<usize> {
    let dist = WeightedIndex::new(profile).expect("non-negative profile with positive mass");
    (0..count).map(|_| dist.sample(rng)).collect()
}

/// Whole-day fingerprints of `per_genre` stations for each of `genres`
/// synthetic genres. A station's profile mixes its genre profile (weight
/// 0.85) with a station-specific one. Returns the fingerprints, ids
/// `g{genre}-{index}`, and the genre of each.
pub fn genre_fingerprints(genres: usize, per_genre: usize, n: usize, seed: u64) -> (Vec<Fingerprint>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let profiles: Vec<Vec<f64>> = (0..genres).map(|_| peaked_profile(n, &mut rng)).collect();
    let mut fps = Vec::new();
    let mut labels = Vec::new();
    for (g, profile) in profiles.iter().enumerate() {
        for i in 0..per_genre {
            let own = peaked_profile(n, &mut rng);
            let mix: Vec<f64> = profile.iter().zip(&own).map(|(a, b)| 0.85 * a + 0.15 * b).collect();
            let assignments = sample_labels(&mix, SLOTS_PER_DAY, &mut rng);
            fps.push(build_fingerprint(&format!("g{g}-{i:03}"), Partition::WholeDay, &assignments, n).expect("non-empty"));
            labels.push(g);
        }
    }
    (fps, labels)
}

/// One scheduled day of cluster labels where each slot draws from the
/// profile of its time-of-day partition.
pub fn daypart_labels<'a>(
    profile: impl Fn(Partition) -> &'a [f64],
    day: NaiveDate,
    tz: FixedOffset,
    rng: &mut impl Rng,
) -> (Vec<usize>, Vec<DateTime<Utc>>) {
    let slots = build_schedule(day, tz);
    let mut labels = Vec::with_capacity(slots.len());
    let mut times = Vec::with_capacity(slots.len());
    for slot in slots {
        let p = Partition::of_timestamp(slot.to_utc(), tz);
        labels.push(sample_labels(profile(p), 1, rng)[0]);
        times.push(slot.to_utc());
    }
    (labels, times)
}

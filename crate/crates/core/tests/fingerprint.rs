use std::collections::HashMap;

use chrono::{Duration, FixedOffset, NaiveDate, TimeZone, Utc};
use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stationprint_core::collector::build_schedule;
use stationprint_core::embed::Embedding;
use stationprint_core::fingerprint::{
    fingerprint_embeddings, fit_kmeans, lloyd_labels, select_k, FingerprintOptions, Partition, TARGET_MASS,
};
use stationprint_core::synth::gaussian_blobs;

/// Smallest within-cluster sum of squares over every labeling of the rows
/// into exactly `k` non-empty clusters.
fn exhaustive_optimum(points: ArrayView2<f64>, k: usize) -> f64 {
    let n = points.nrows();
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        let mut used = vec![false; k];
        labels.iter().for_each(|&l| used[l] = true);
        if used.iter().all(|&u| u) {
            let mut cost = 0.0;
            for c in 0..k {
                let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
                let mut mean = ndarray::Array1::<f64>::zeros(points.ncols());
                for &i in &members {
                    mean += &points.row(i);
                }
                mean /= members.len() as f64;
                for &i in &members {
                    cost += (&points.row(i) - &mean).mapv(|v| v * v).sum();
                }
            }
            best = best.min(cost);
        }
        // next labeling in base k
        let mut i = 0;
        while i < n {
            labels[i] += 1;
            if labels[i] < k {
                break;
            }
            labels[i] = 0;
            i += 1;
        }
        if i == n {
            return best;
        }
    }
}

/// Fraction of points whose label maps to the planted label under the
/// majority assignment, or 0 if that assignment is not a bijection.
fn permutation_agreement(found: &[usize], planted: &[usize], k: usize) -> f64 {
    let mut table = vec![vec![0usize; k]; k];
    for (&f, &p) in found.iter().zip(planted) {
        table[f][p] += 1;
    }
    let mapping: Vec<usize> =
        table.iter().map(|row| (0..k).max_by_key(|&p| (row[p], std::cmp::Reverse(p))).unwrap()).collect();
    let mut sorted = mapping.clone();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != k {
        return 0.0;
    }
    let hits = found.iter().zip(planted).filter(|(&f, &p)| mapping[f] == p).count();
    hits as f64 / found.len() as f64
}

#[test]
fn tiny_instances_reach_the_exhaustive_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for trial in 0..40 {
        let n = rng.random_range(4..=8);
        let k = rng.random_range(2..=3.min(n - 1));
        let pts = Array2::from_shape_simple_fn((n, 2), || rng.random_range(-5.0..5.0));
        let model = fit_kmeans(pts.view(), k, trial).unwrap();
        let opt = exhaustive_optimum(pts.view(), k);
        assert!((model.inertia - opt).abs() <= 1e-9 * opt.max(1.0), "trial {trial}: {} vs {opt}", model.inertia);
    }
}

#[test]
fn planted_gaussians_in_8d_are_recovered() {
    let (pts, planted, _) = gaussian_blobs(5, 200, 8, 20.0, 1.0, 5);
    let model = fit_kmeans(pts.view(), 5, 0).unwrap();
    let labels = lloyd_labels(&model, pts.view());
    let agreement = permutation_agreement(&labels, &planted, 5);
    assert!(agreement >= 0.99, "{agreement}");
}

#[test]
fn planted_eleven_clusters_selected() {
    let mut hits = 0;
    for seed in 0..10 {
        let (pts, _, _) = gaussian_blobs(11, 40, 8, 30.0, 1.0, 1000 + seed);
        let sel = select_k(pts.view(), 9, 16, seed).unwrap();
        assert_eq!(sel.scores.len(), 8);
        if sel.best == 11 {
            hits += 1;
        }
    }
    assert!(hits >= 9, "{hits}/10");
}

fn station_embeddings(stations: usize, seed: u64) -> Vec<Embedding> {
    let tz = FixedOffset::east_opt(3600).unwrap();
    let day = NaiveDate::from_ymd_opt(2019, 11, 4).unwrap();
    let slots = build_schedule(day, tz);
    let (centers, _, _) = gaussian_blobs(4, 1, 6, 20.0, 0.0001, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for s in 0..stations {
        for slot in &slots {
            let c = rng.random_range(0..4);
            let vector = centers.row(c).iter().map(|&v| (v + rng.random_range(-0.5..0.5)) as f32).collect();
            out.push(Embedding { station_id: format!("st-{s:02}"), timestamp: slot.to_utc(), vector });
        }
    }
    out
}

#[test]
fn fingerprints_do_not_depend_on_input_order() {
    let embeddings = station_embeddings(3, 4);
    let opts = FingerprintOptions { k_min: 3, k_max: 6, seed: 9, tz: FixedOffset::east_opt(3600).unwrap(), ..Default::default() };
    let a = fingerprint_embeddings(&embeddings, &opts).unwrap();
    let mut shuffled = embeddings.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
    let b = fingerprint_embeddings(&shuffled, &opts).unwrap();
    assert_eq!(a.selection.best, 4);
    assert_eq!(a.selection.best, b.selection.best);
    assert_eq!(a.fingerprints, b.fingerprints);
    assert_eq!(a.fingerprints.len(), 3 * 4);

    let by_key: HashMap<_, _> = a.fingerprints.iter().map(|f| ((f.station_id.as_str(), f.partition), f)).collect();
    for s in 0..3 {
        let id = format!("st-{s:02}");
        let whole = by_key[&(id.as_str(), Partition::WholeDay)];
        assert_eq!(whole.sample_count, 576);
        assert!(whole.histogram.iter().all(|h| h.fract() == 0.0));
        let counts: Vec<usize> =
            Partition::TIMES_OF_DAY.iter().map(|&p| by_key[&(id.as_str(), p)].sample_count).collect();
        assert_eq!(counts, vec![192, 96, 288]);
        for p in Partition::ALL {
            assert!((by_key[&(id.as_str(), p)].mass() - TARGET_MASS).abs() <= 1e-9);
        }
    }
}

#[test]
fn short_stations_are_clustered_but_not_fingerprinted() {
    let mut embeddings = station_embeddings(2, 8);
    let t0 = Utc.with_ymd_and_hms(2019, 11, 4, 10, 7, 0).unwrap();
    for i in 0..10 {
        embeddings.push(Embedding {
            station_id: "partial".into(),
            timestamp: t0 + Duration::minutes(2 * i),
            vector: embeddings[i as usize].vector.clone(),
        });
    }
    let opts = FingerprintOptions { k_min: 3, k_max: 5, ..Default::default() };
    let run = fingerprint_embeddings(&embeddings, &opts).unwrap();
    assert_eq!(run.skipped, vec!["partial".to_string()]);
    assert!(run.fingerprints.iter().all(|f| f.station_id != "partial"));
}


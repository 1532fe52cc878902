use std::time::Instant;

use chrono::{FixedOffset, NaiveDate};
use ndarray::{array, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use stationprint_core::analyze::{
    analyze_store, archetypal_analysis, archetype_neighborhood, daytime_archetypes, daytime_trajectories,
    export_plot_data, on_simplex, pca_2d, read_pca_points, rss_scree, sampling_noise_bound, select_archetype_count,
    simplex_least_squares, AnalysisOptions, ArchetypeModel, PlotData,
};
use stationprint_core::fingerprint::{station_fingerprints, Fingerprint, Partition, TARGET_MASS};
use stationprint_core::recommend::FingerprintStore;
use stationprint_core::synth::{daypart_labels, genre_fingerprints, hull_points, peaked_profile, simplex_point};

fn match_error(found: ArrayView2<f64>, planted: ArrayView2<f64>) -> f64 {
    // best permutation by brute force (k <= 4)
    fn perms(k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in perms(k - 1) {
            for i in 0..=p.len() {
                let mut q = p.clone();
                q.insert(i, k - 1);
                out.push(q);
            }
        }
        out
    }
    perms(found.nrows())
        .into_iter()
        .map(|p| {
            p.iter()
                .enumerate()
                .map(|(i, &j)| (&found.row(i) - &planted.row(j)).iter().map(|d| d.abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max)
        })
        .fold(f64::INFINITY, f64::min)
}

fn check_model(x: ArrayView2<f64>, model: &ArchetypeModel) {
    assert!(on_simplex(model.alpha.view()));
    assert!(on_simplex(model.beta.view()));
    let z = model.beta.dot(&x);
    assert!((&z - &model.archetypes).iter().all(|d| d.abs() < 1e-9));
    assert!(model.trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)));
}

#[test]
fn triangle_vertices_recovered() {
    let vertices = array![[0.0, 0.0], [10.0, 0.0], [3.0, 8.0]];
    let x = hull_points(&vertices, 60, 1.0, 1);
    let model = archetypal_analysis(x.view(), 3, 0).unwrap();
    check_model(x.view(), &model);
    assert!(match_error(model.archetypes.view(), vertices.view()) < 1e-3);
    assert!(model.rss < 1e-8, "{}", model.rss);
}

/// Best RSS over random convex archetype sets, each scored with per-row
/// weights found on a fine barycentric grid.
fn random_restart_oracle(x: ArrayView2<f64>, k: usize, restarts: usize, seed: u64) -> f64 {
    assert_eq!(k, 3);
    let steps = 60;
    let grid: Vec<[f64; 3]> = (0..=steps)
        .flat_map(|i| (0..=steps - i).map(move |j| [i as f64, j as f64, (steps - i - j) as f64].map(|v| v / steps as f64)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = f64::INFINITY;
    for _ in 0..restarts {
        let beta = Array2::from_shape_fn((k, x.nrows()), |_| 0.0);
        let mut beta = beta;
        for mut row in beta.rows_mut() {
            // mostly a single data point, sometimes a blend
            if rng.random_bool(0.5) {
                row[rng.random_range(0..x.nrows())] = 1.0;
            } else {
                row.assign(&simplex_point(x.nrows(), &mut rng));
            }
        }
        let z = beta.dot(&x);
        let rss: f64 = x
            .rows()
            .into_iter()
            .map(|r| {
                grid.iter()
                    .map(|w| (&r - &(&z.row(0) * w[0] + &z.row(1) * w[1] + &z.row(2) * w[2])).mapv(|v| v * v).sum())
                    .fold(f64::INFINITY, f64::min)
            })
            .sum();
        best = best.min(rss);
    }
    best
}

#[test]
fn ten_point_instance_beats_random_restart_search() {
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_simple_fn((10, 3), || rng.random_range(-5.0..5.0));
        let model = archetypal_analysis(x.view(), 3, seed).unwrap();
        check_model(x.view(), &model);
        // reconstruction really is alpha . Z
        let resid = &x - &model.alpha.dot(&model.archetypes);
        assert!((resid.mapv(|v| v * v).sum() - model.rss).abs() < 1e-9 * model.rss.max(1.0));
        let oracle = random_restart_oracle(x.view(), 3, 400, seed + 50);
        assert!(model.rss <= oracle * (1.0 + 1e-6), "seed {seed}: {} > {oracle}", model.rss);
    }
}

#[test]
fn alpha_rows_are_optimal_given_archetypes() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = Array2::from_shape_simple_fn((30, 5), || rng.random_range(0.0..10.0));
    let model = archetypal_analysis(x.view(), 4, 1).unwrap();
    for (i, row) in x.rows().into_iter().enumerate() {
        let mut w = vec![0.25; 4];
        let f = simplex_least_squares(model.archetypes.view(), row, &mut w);
        let current = (&row - &model.alpha.row(i).dot(&model.archetypes)).mapv(|v| v * v).sum();
        assert!(current <= f * (1.0 + 1e-4) + 1e-9, "row {i}: {current} vs {f}");
    }
}

/// Four well-separated vertices in 11-D (a randomly rotated regular simplex
/// with per-vertex jitter) and stations crowding around them.
fn planted_hull(seed: u64) -> (Array2<f64>, Array2<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::<f64>::new(0.0, 1.0).unwrap();
    // orthonormal directions by Gram-Schmidt
    let mut q: Vec<Array1<f64>> = Vec::new();
    while q.len() < 4 {
        let mut v: Array1<f64> = (0..11).map(|_| normal.sample(&mut rng)).collect();
        for u in &q {
            let d = v.dot(u);
            v.scaled_add(-d, u);
        }
        let len = v.dot(&v).sqrt();
        if len > 1e-6 {
            q.push(v / len);
        }
    }
    let vertices = Array2::from_shape_fn((4, 11), |(i, j)| 100.0 + 120.0 * q[i][j] + 12.0 * normal.sample(&mut rng));
    (hull_points(&vertices, 196, 0.3, seed), vertices)
}

#[test]
fn planted_hull_scree_and_elbow() {
    let mut hits = 0;
    for seed in 0..10 {
        let (x, vertices) = planted_hull(seed);
        let scree = rss_scree(x.view(), 2..=8, seed).unwrap();
        assert_eq!(scree.len(), 7);
        let scale = scree[0].1;
        for w in scree.windows(2) {
            assert!(w[1].1 <= w[0].1 + 1e-6 * scale, "seed {seed}: {scree:?}");
        }
        if select_archetype_count(&scree).unwrap() == 4 {
            hits += 1;
        }
        let model = archetypal_analysis(x.view(), 4, seed).unwrap();
        check_model(x.view(), &model);
        assert!(match_error(model.archetypes.view(), vertices.view()) < 1e-3, "seed {seed}");
    }
    assert!(hits >= 9, "{hits}/10");
}

#[test]
fn scree_edge_cases() {
    let (x, _) = planted_hull(3);
    let small = x.slice(ndarray::s![..12, ..]).to_owned();
    assert_eq!(rss_scree(small.view(), [2], 0).unwrap().len(), 1);
    let full = rss_scree(small.view(), 2..=11, 0).unwrap();
    assert!(full.last().unwrap().1 <= full[0].1);
}

#[test]
fn five_hundred_stations_under_a_minute() {
    let (fps, _) = genre_fingerprints(5, 100, 11, 4);
    let x = Array2::from_shape_fn((fps.len(), 11), |(i, j)| fps[i].histogram[j]);
    let start = Instant::now();
    let model = archetypal_analysis(x.view(), 4, 0).unwrap();
    let elapsed = start.elapsed();
    check_model(x.view(), &model);
    assert!(elapsed.as_secs_f64() < 60.0, "{elapsed:?}");
}

#[test]
fn neighborhood_fixture() {
    // stations on a wide plane with tiny off-plane jitter; the archetype sits
    // on station 0 and 7 stations are placed within 150 of it
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut x = Array2::zeros((40, 11));
    let center = [1000.0, 1000.0];
    for i in 0..40 {
        let (a, b) = if i == 0 {
            (center[0], center[1])
        } else if i <= 7 {
            let r = rng.random_range(0.0..140.0);
            let t = rng.random_range(0.0..std::f64::consts::TAU);
            (center[0] + r * t.cos(), center[1] + r * t.sin())
        } else {
            let r = rng.random_range(400.0..2000.0);
            let t = rng.random_range(0.0..std::f64::consts::TAU);
            (center[0] + r * t.cos(), center[1] + r * t.sin())
        };
        x[[i, 0]] = a;
        x[[i, 1]] = b;
        for j in 2..11 {
            x[[i, j]] = rng.random_range(-0.5..0.5);
        }
    }
    let proj = pca_2d(x.view()).unwrap();
    let model = ArchetypeModel {
        archetypes: x.slice(ndarray::s![0..1, ..]).to_owned(),
        alpha: Array2::zeros((40, 1)),
        beta: Array2::zeros((1, 40)),
        rss: 0.0,
        trace: vec![],
    };
    let ids: Vec<String> = (0..40).map(|i| format!("s{i:02}")).collect();
    let got = archetype_neighborhood(&model, &proj, &ids, 0, 150.0);
    // oracle: direct scan of the projected coordinates
    let a = proj.project(model.archetypes.row(0));
    let expected: Vec<&str> = (0..40)
        .filter(|&i| ((proj.coords[[i, 0]] - a[0]).powi(2) + (proj.coords[[i, 1]] - a[1]).powi(2)).sqrt() <= 150.0)
        .map(|i| ids[i].as_str())
        .collect();
    assert_eq!(expected.len(), 8); // the 7 plus the station under the archetype
    let mut names: Vec<&str> = got.iter().map(|(s, _)| s.as_str()).collect();
    names.sort();
    assert_eq!(names, expected);
    assert!(got.windows(2).all(|w| w[0].1 <= w[1].1));
    assert!(archetype_neighborhood(&model, &proj, &ids, 0, 0.0).len() <= 1);
}

fn utc_plus_one() -> FixedOffset {
    FixedOffset::east_opt(3600).unwrap()
}

/// A store of `count` background stations plus the given special ones, each
/// with whole-day and time-of-day fingerprints from one simulated day.
fn daytime_store(
    count: usize,
    special: &[(&str, Vec<f64>, Vec<f64>)],
    night_shift: bool,
    seed: u64,
) -> FingerprintStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let day = NaiveDate::from_ymd_opt(2019, 11, 4).unwrap();
    let n = 11;
    let mut fps: Vec<Fingerprint> = Vec::new();
    for s in 0..count {
        let base = peaked_profile(n, &mut rng);
        let night: Vec<f64> = if night_shift {
            // night programme moves to the upper clusters
            let mut v = base.clone();
            v.rotate_right(4);
            v
        } else {
            base.clone()
        };
        let (labels, times) =
            daypart_labels(|p| if p == Partition::Night { &night } else { &base }, day, utc_plus_one(), &mut rng);
        fps.extend(station_fingerprints(&format!("bg{s:02}"), &labels, &times, n, utc_plus_one(), TARGET_MASS).unwrap());
    }
    for (id, rest, morning) in special {
        let (labels, times) =
            daypart_labels(|p| if p == Partition::Morning { morning } else { rest }, day, utc_plus_one(), &mut rng);
        fps.extend(station_fingerprints(id, &labels, &times, n, utc_plus_one(), TARGET_MASS).unwrap());
    }
    FingerprintStore::new(fps).unwrap()
}

#[test]
fn stationary_station_within_noise_and_morning_shift_beyond() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let flat = peaked_profile(11, &mut rng);
        let mut shifted = flat.clone();
        shifted.rotate_left(5);
        let store = daytime_store(
            10,
            &[("stationary", flat.clone(), flat.clone()), ("morning-shift", flat.clone(), shifted)],
            false,
            seed,
        );
        let (_, x) = stationprint_core::analyze::whole_day_matrix(&store);
        let proj = pca_2d(x.view()).unwrap();
        let trajectories = daytime_trajectories(&store, &proj);
        assert_eq!(trajectories.len(), 12);
        let counts = |p: Partition| match p {
            Partition::WholeDay => 576,
            Partition::Night => 192,
            Partition::Morning => 96,
            Partition::Day => 288,
        };
        for t in &trajectories {
            assert_eq!(t.points.len(), 4);
            assert_eq!(t.points.iter().map(|(p, _)| *p).collect::<Vec<_>>(), Partition::ALL.to_vec());
            assert_eq!(t.distances.len(), 6);
        }

        let stationary = trajectories.iter().find(|t| t.station_id == "stationary").unwrap();
        for &(a, b, d) in &stationary.distances {
            let bound = sampling_noise_bound(&flat, counts(a), counts(b), TARGET_MASS);
            assert!(d <= bound, "seed {seed}: {a}-{b} {d} > {bound}");
        }

        // bound for the shifted station estimated from its own whole-day mix
        let whole = store.get("morning-shift", Partition::WholeDay).unwrap();
        let estimate: Vec<f64> = whole.histogram.iter().map(|h| h / TARGET_MASS).collect();
        let shifted_t = trajectories.iter().find(|t| t.station_id == "morning-shift").unwrap();
        for &(a, b, d) in &shifted_t.distances {
            let bound = sampling_noise_bound(&estimate, counts(a), counts(b), TARGET_MASS);
            if a == Partition::Morning || b == Partition::Morning {
                if a != Partition::WholeDay {
                    assert!(d > bound, "seed {seed}: {a}-{b} {d} <= {bound}");
                }
            } else if a != Partition::WholeDay {
                assert!(d <= bound, "seed {seed}: {a}-{b} {d} > {bound}");
            }
        }
    }
}

#[test]
fn daytime_archetypes_identical_and_shifted() {
    // identical fingerprints in every partition
    let (fps, _) = genre_fingerprints(4, 6, 11, 21);
    let mut all = Vec::new();
    for fp in &fps {
        for p in Partition::ALL {
            all.push(Fingerprint { partition: p, ..fp.clone() });
        }
    }
    let store = FingerprintStore::new(all).unwrap();
    let (_, x) = stationprint_core::analyze::whole_day_matrix(&store);
    let proj = pca_2d(x.view()).unwrap();
    let per = daytime_archetypes(&store, &Partition::TIMES_OF_DAY, 3, 0, &proj).unwrap();
    assert_eq!(per.len(), 3);
    for d in &per {
        assert_eq!(d.model.k(), 3);
        assert_eq!(d.positions.dim(), (3, 2));
        assert!((&d.model.archetypes - &per[0].model.archetypes).iter().all(|v| v.abs() < 1e-9));
    }

    // night programme differs from the rest of the day
    let store = daytime_store(30, &[], true, 4);
    let (_, x) = stationprint_core::analyze::whole_day_matrix(&store);
    let proj = pca_2d(x.view()).unwrap();
    let per = daytime_archetypes(&store, &Partition::TIMES_OF_DAY, 3, 0, &proj).unwrap();
    let night = &per[0].model.archetypes;
    let day = &per[2].model.archetypes;
    let gap = match_error(night.view(), day.view());
    assert!(gap > 1e-3, "{gap}");
    // morning and day follow the same programme: closer to each other than to night
    assert!(match_error(per[1].model.archetypes.view(), day.view()) < gap);
}

#[test]
fn store_analysis_exports_one_row_per_station() {
    let (fps, _) = genre_fingerprints(5, 86, 11, 7);
    let mut fps = fps;
    fps.push(genre_fingerprints(1, 1, 11, 8).0.remove(0));
    fps.last_mut().unwrap().station_id = "extra".into();
    assert_eq!(fps.len(), 431);
    let store = FingerprintStore::new(fps).unwrap();
    let analysis = analyze_store(&store, &AnalysisOptions { scree: 2..=6, ..Default::default() }).unwrap();
    assert_eq!(analysis.scree.len(), 5);
    assert_eq!(analysis.model.k(), select_archetype_count(&analysis.scree).unwrap());
    assert!(analysis.trajectories.is_empty() && analysis.daytime.is_empty());
    let dir = tempfile::tempdir().unwrap();
    export_plot_data(&PlotData::from(&analysis), dir.path()).unwrap();
    let points = read_pca_points(dir.path().join("pca_points.csv")).unwrap();
    assert_eq!(points.len(), 431);
    for (p, row) in points.iter().zip(analysis.projection.coords.rows()) {
        assert_eq!(p.x.to_bits(), row[0].to_bits());
        assert_eq!(p.y.to_bits(), row[1].to_bits());
    }
    let scree = std::fs::read_to_string(dir.path().join("scree.csv")).unwrap();
    assert_eq!(scree.lines().count(), 6);
}

#[test]
fn mean_projects_to_origin() {
    let (fps, _) = genre_fingerprints(3, 5, 11, 2);
    let x = Array2::from_shape_fn((fps.len(), 11), |(i, j)| fps[i].histogram[j]);
    let proj = pca_2d(x.view()).unwrap();
    let mean: Array1<f64> = x.mean_axis(Axis(0)).unwrap();
    let p = proj.project(mean.view());
    assert!(p[0].abs() < 1e-9 && p[1].abs() < 1e-9);
}

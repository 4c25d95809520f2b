use std::time::{Duration, Instant};

use dispca::linalg::Matrix;
use dispca::protocol::expected_words;
use dispca::sketching::gaussian_matrix;
use dispca::synth::{gaussian_mixture, low_rank_plus_noise, power_spectrum, with_spectrum};
use dispca_apps::data::synthetic;
use dispca_apps::{
    emit_results, read_results, run_kmeans, run_lowrank, run_pcr, BackendChoice, ExperimentConfig, ExperimentError, ResultRow,
    ResultSet, Synthetic, SyntheticSpec, Task, CSV_HEADER,
};

fn cfg(task: Task, s: usize, rank: usize, dims: &[usize]) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(task);
    c.s = s;
    c.rank = rank;
    c.projection_dims = dims.to_vec();
    c.no_timing = true;
    c
}

#[test]
fn defaults_follow_the_experiment_setup() {
    let c = ExperimentConfig::new(Task::Lowrank);
    assert_eq!((c.rank, c.s, c.alpha), (10, 25, 2.0));
    assert_eq!(ExperimentConfig::new(Task::Kmeans).rank, 10);
    assert_eq!(c.timeout, Duration::from_secs(600));
    assert_eq!(c.default_dims(35), vec![10, 20, 30, 35]);
}

#[test]
fn lowrank_full_dimension_is_exact() {
    let p = with_spectrum(300, 20, &power_spectrum(20, 1.0), 1);
    let set = run_lowrank(&cfg(Task::Lowrank, 5, 3, &[20]), &p).unwrap();
    assert!((set.rows[0].ratio - 1.0).abs() <= 1e-8, "{}", set.rows[0].ratio);
}

#[test]
fn lowrank_ratio_and_words() {
    let (r, eps) = (3, 0.5);
    let t = r + (4.0 * r as f64 / eps).ceil() as usize - 1;
    let p = with_spectrum(500, 40, &power_spectrum(40, 1.0), 2);
    let set = run_lowrank(&cfg(Task::Lowrank, 5, r, &[r, t]), &p).unwrap();
    assert!(set.rows[1].ratio <= 1.0 + eps);
    for row in &set.rows {
        assert!(row.ratio >= 1.0 - 1e-8);
        let t = row.projection_dim;
        assert_eq!(row.comm_words, expected_words(5, 40, t, r.min(t), false));
    }
}

#[test]
fn kmeans_zero_radius_is_ratio_one() {
    let centers = gaussian_matrix(4, 6, 3).scale(20.0);
    let idx: Vec<usize> = (0..200).map(|i| i % 4).collect();
    let p = centers.select_rows(&idx);
    let set = run_kmeans(&cfg(Task::Kmeans, 4, 4, &[4]), &p).unwrap();
    assert_eq!(set.rows[0].ratio, 1.0);
}

#[test]
fn kmeans_mixture_ratio() {
    let (p, _) = gaussian_mixture(2000, 30, 10, 5.0, 1.0, 4);
    let mut c = cfg(Task::Kmeans, 8, 10, &[12]);
    c.repetitions = 3;
    let set = run_kmeans(&c, &p).unwrap();
    assert!(set.rows[0].ratio <= 1.2, "{}", set.rows[0].ratio);
    assert!(set.rows[0].comm_words < 2000 * 30 / 5);
}

#[test]
fn kmeans_hundred_nodes() {
    let (p, _) = gaussian_mixture(3000, 20, 10, 5.0, 1.0, 5);
    let set = run_kmeans(&cfg(Task::Kmeans, 100, 10, &[10]), &p).unwrap();
    assert!(set.rows[0].ratio.is_finite() && set.rows[0].ratio > 0.0);
}

#[test]
fn pcr_exact_matches_global_once_rank_is_covered() {
    // exactly rank 4: local top-t factors lose nothing for t >= 4
    let x = low_rank_plus_noise(400, 15, 4, 0.7, 0.0, 6);
    let y: Vec<f64> = x.row_iter().map(|r| r[0] - 2.0 * r[3] + 0.5 * r[7]).collect();
    let dims: Vec<usize> = (4..=15).collect();
    let set = run_pcr(&cfg(Task::Pcr, 5, 1, &dims), &x, &y).unwrap();
    for row in &set.rows {
        assert!((row.ratio - 1.0).abs() <= 1e-6, "t = {}: {}", row.projection_dim, row.ratio);
    }
    assert_eq!(set.baselines.len(), dims.len());
}

#[test]
fn pcr_full_dimension_is_least_squares() {
    let ds = synthetic(&SyntheticSpec {
        kind: Synthetic::LowRank,
        n: 400,
        d: 15,
        components: 4,
        seed: 6,
    });
    assert_eq!(ds.features, low_rank_plus_noise(400, 15, 4, 0.8, 0.1, 6));
    let set = run_pcr(&cfg(Task::Pcr, 5, 1, &[15]), &ds.features, ds.targets.as_ref().unwrap()).unwrap();
    assert!((set.rows[0].ratio - 1.0).abs() <= 1e-6, "{}", set.rows[0].ratio);
}

#[test]
fn pcr_fast_on_low_rank_data() {
    let ds = synthetic(&SyntheticSpec {
        kind: Synthetic::LowRank,
        n: 2000,
        d: 40,
        components: 5,
        seed: 7,
    });
    let mut c = cfg(Task::Pcr, 8, 5, &[5, 10, 20]);
    c.backend = BackendChoice::Fast;
    c.repetitions = 5;
    let set = run_pcr(&c, &ds.features, ds.targets.as_ref().unwrap()).unwrap();
    for row in &set.rows {
        assert!(row.ratio <= 1.05, "t = {}: {}", row.projection_dim, row.ratio);
    }
}

#[test]
fn fast_backend_is_faster_at_scale() {
    let ds = synthetic(&SyntheticSpec {
        kind: Synthetic::Sparse,
        n: 5000,
        d: 200,
        components: 10,
        seed: 8,
    });
    let mut c = cfg(Task::Lowrank, 5, 10, &[20]);
    let t0 = Instant::now();
    run_lowrank(&c, &ds.features).unwrap();
    let exact = t0.elapsed();
    c.backend = BackendChoice::Fast;
    let t0 = Instant::now();
    run_lowrank(&c, &ds.features).unwrap();
    let fast = t0.elapsed();
    assert!(fast < exact, "fast {fast:?} vs exact {exact:?}");
}

#[test]
fn identical_config_gives_identical_output() {
    let dir = tempfile::tempdir().unwrap();
    let (p, _) = gaussian_mixture(300, 10, 3, 5.0, 1.0, 9);
    let mut c = cfg(Task::Kmeans, 4, 3, &[3, 6]);
    c.repetitions = 2;
    let a = emit_results(&run_kmeans(&c, &p).unwrap(), &dir.path().join("a")).unwrap();
    let b = emit_results(&run_kmeans(&c, &p).unwrap(), &dir.path().join("b")).unwrap();
    assert_eq!(std::fs::read(&a.0).unwrap(), std::fs::read(&b.0).unwrap());
    assert_eq!(std::fs::read(&a.1).unwrap(), std::fs::read(&b.1).unwrap());
}

fn sample_set() -> ResultSet {
    ResultSet {
        task: Task::Lowrank,
        n: 10,
        d: 4,
        baselines: vec![],
        rows: vec![
            ResultRow {
                projection_dim: 2,
                ratio: 1.0625,
                wall_time_ms: 3.5,
                comm_words: 120,
                seed: 7,
            },
            ResultRow {
                projection_dim: 4,
                ratio: 0.1 + 0.2,
                wall_time_ms: 0.0,
                comm_words: 240,
                seed: 7,
            },
        ],
    }
}

#[test]
fn emit_round_trip_and_csv_header() {
    let dir = tempfile::tempdir().unwrap();
    let set = sample_set();
    let (json, csv) = emit_results(&set, &dir.path().join("out.json")).unwrap();
    assert_eq!(json.file_name().unwrap(), "out.json");
    assert_eq!(csv.file_name().unwrap(), "out.csv");
    assert_eq!(read_results(&json).unwrap(), set);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "projection_dim,ratio,wall_time_ms,comm_words");
    assert_eq!(CSV_HEADER.join(","), "projection_dim,ratio,wall_time_ms,comm_words");
    assert_eq!(lines.next().unwrap(), "2,1.0625,3.5,120");
    assert_eq!(lines.count(), 1);
}

#[test]
fn empty_rows_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut set = sample_set();
    set.rows.clear();
    assert!(matches!(emit_results(&set, &dir.path().join("x")), Err(ExperimentError::NoRows)));
    assert!(!dir.path().join("x.json").exists());
}

#[test]
fn write_errors_name_the_path() {
    let err = emit_results(&sample_set(), std::path::Path::new("/no/such/dir/out")).unwrap_err();
    assert!(err.to_string().contains("/no/such/dir/out.json"), "{err}");
}

#[test]
fn invalid_configs_rejected() {
    let p = gaussian_matrix(50, 6, 1);
    assert!(run_lowrank(&cfg(Task::Lowrank, 2, 2, &[]), &p).is_err());
    assert!(run_lowrank(&cfg(Task::Lowrank, 2, 2, &[7]), &p).is_err());
    assert!(run_lowrank(&cfg(Task::Lowrank, 2, 2, &[0]), &p).is_err());
    assert!(run_lowrank(&cfg(Task::Lowrank, 60, 2, &[3]), &p).is_err());
    let mut c = cfg(Task::Lowrank, 2, 2, &[3]);
    c.repetitions = 0;
    assert!(run_lowrank(&c, &p).is_err());
    assert!(run_pcr(&cfg(Task::Pcr, 2, 1, &[2]), &p, &[1.0; 3]).is_err());
}

#[test]
fn timeout_returns_partial_results() {
    let p = gaussian_matrix(100, 8, 2);
    let mut c = cfg(Task::Lowrank, 2, 2, &[2, 4]);
    c.timeout = Duration::ZERO;
    match run_lowrank(&c, &p) {
        Err(ExperimentError::Timeout { partial, planned, .. }) => {
            assert_eq!(planned, 2);
            assert!(partial.rows.is_empty());
        }
        other => panic!("expected a timeout, got {other:?}"),
    }
}

#[test]
fn single_column_target_is_usable() {
    let x = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [2.0, 1.0]]).unwrap();
    let y = [1.0, 2.0, 3.0, 4.0];
    let set = run_pcr(&cfg(Task::Pcr, 2, 1, &[2]), &x, &y).unwrap();
    assert!((set.rows[0].ratio - 1.0).abs() < 1e-9);
}

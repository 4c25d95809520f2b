//! Experiment harness for distributed PCA: ratio-vs-projection-dimension
//! sweeps for low-rank approximation, k-means and principal component
//! regression, with JSON and CSV output.

pub mod data;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use dispca::clustering::{best_lloyd, distributed_kmeans, pcr, DistKMeansConfig, Init, LLOYD_MAX_ITERS};
use dispca::linalg::{center, dist_sq, svd, Matrix, Subspace};
use dispca::protocol::{dispca as run_dispca, partition_powerlaw, DisPcaParams, PartitionedDataset, SketchParams};
use dispca::rng::derive_seed;
use dispca::rsvd::default_power_iterations;
use dispca::sketching::sketch_rows_for;

pub use data::{load_dataset, Dataset, Format, LoadError, Synthetic, SyntheticSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Lowrank,
    Kmeans,
    Pcr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BackendChoice {
    /// Exact SVD everywhere.
    Exact,
    /// CountSketch at the nodes, randomized SVD everywhere.
    Fast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: Task,
    /// `None` for synthetic data.
    pub dataset_path: Option<PathBuf>,
    pub format: Format,
    /// Number of nodes `s`.
    pub s: usize,
    /// Power-law exponent of the partition.
    pub alpha: f64,
    /// `r` for low-rank, `k` for k-means; unused by PCR.
    pub rank: usize,
    pub eps: f64,
    pub projection_dims: Vec<usize>,
    pub backend: BackendChoice,
    /// Boosting failure probability for the fast backend; `None` sketches once.
    pub delta: Option<f64>,
    pub repetitions: usize,
    pub seed: u64,
    /// Sampled points across all nodes (k-means).
    pub coreset_size: usize,
    /// Ridge penalty (PCR).
    pub ridge: f64,
    /// Target column for PCR when the format has no labels; default last.
    pub target_col: Option<usize>,
    /// Subtract column means before partitioning.
    pub center: bool,
    pub timeout: Duration,
    /// Report zero wall time so output is byte-identical across runs.
    pub no_timing: bool,
}

impl ExperimentConfig {
    pub fn new(task: Task) -> Self {
        Self {
            task,
            dataset_path: None,
            format: Format::CsvDense,
            s: 25,
            alpha: 2.0,
            rank: 10,
            eps: match task {
                Task::Kmeans => 0.3,
                _ => 0.5,
            },
            projection_dims: Vec::new(),
            backend: BackendChoice::Exact,
            delta: None,
            repetitions: 1,
            seed: 0,
            coreset_size: 200,
            ridge: 0.0,
            target_col: None,
            center: false,
            timeout: Duration::from_secs(600),
            no_timing: false,
        }
    }

    /// Checks the sweep against a dataset width `d`.
    pub fn validate(&self, n: usize, d: usize) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.projection_dims.is_empty() {
            return bad("projection_dims must be non-empty".into());
        }
        if let Some(&t) = self.projection_dims.iter().find(|&&t| t == 0 || t > d) {
            return bad(format!("projection dim {t} outside 1..={d}"));
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        if self.s == 0 || self.s > n {
            return bad(format!("need 1 <= nodes <= rows, got {} nodes for {n} rows", self.s));
        }
        if self.task != Task::Pcr && (self.rank == 0 || self.rank > d) {
            return bad(format!("rank {} outside 1..={d}", self.rank));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return bad(format!("eps {} outside (0, 1)", self.eps));
        }
        Ok(())
    }

    /// `{r, 2r, ..., 5r}` clamped to `d`, or `{1, ..., d}` spread over five
    /// steps for PCR.
    pub fn default_dims(&self, d: usize) -> Vec<usize> {
        let base = match self.task {
            Task::Pcr => d.div_ceil(5).max(1),
            _ => self.rank.max(1),
        };
        let mut dims: Vec<usize> = (1..=5).map(|i| (i * base).min(d)).collect();
        dims.dedup();
        dims
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub projection_dim: usize,
    /// Distributed metric over the global baseline, averaged over repetitions.
    pub ratio: f64,
    /// Mean wall time per repetition.
    pub wall_time_ms: f64,
    /// Transcript total of the first repetition.
    pub comm_words: u64,
    pub seed: u64,
}

/// Global baseline value, per projection dimension where it depends on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub projection_dim: Option<usize>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultSet {
    pub task: Task,
    pub n: usize,
    pub d: usize,
    pub baselines: Vec<Baseline>,
    pub rows: Vec<ResultRow>,
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Core(#[from] dispca::Error),
    #[error("timed out after {elapsed:?} with {} of {planned} projection dims done", partial.rows.len())]
    Timeout {
        elapsed: Duration,
        planned: usize,
        partial: Box<ResultSet>,
    },
    #[error("no result rows to write")]
    NoRows,
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

/// Values at or below this fraction of `‖P‖²` count as zero when forming ratios.
const ZERO_FRACTION: f64 = 1e-12;

fn ratio(value: f64, baseline: f64, scale: f64) -> Result<f64, ExperimentError> {
    let floor = ZERO_FRACTION * scale.max(f64::MIN_POSITIVE);
    match (value <= floor, baseline <= floor) {
        (true, true) => Ok(1.0),
        (false, true) => Err(ExperimentError::Config(format!(
            "baseline is zero but the distributed value is {value:e}"
        ))),
        _ => Ok(value.max(0.0) / baseline),
    }
}

fn protocol_params(cfg: &ExperimentConfig, d: usize, t1: usize, t2: usize, seed: u64) -> DisPcaParams {
    match cfg.backend {
        BackendChoice::Exact => DisPcaParams::exact(t1, t2, seed),
        BackendChoice::Fast => {
            let sketch = SketchParams {
                ell: sketch_rows_for(d, cfg.eps),
                eps: cfg.eps.min(0.5),
                delta: cfg.delta,
            };
            let q = default_power_iterations(d, cfg.s, cfg.rank.max(1), cfg.eps);
            DisPcaParams::fast(t1, t2, sketch, q, seed)
        }
    }
}

struct Sweep<'a> {
    cfg: &'a ExperimentConfig,
    start: Instant,
    set: ResultSet,
    planned: usize,
}

impl<'a> Sweep<'a> {
    fn new(cfg: &'a ExperimentConfig, n: usize, d: usize) -> Self {
        Self {
            cfg,
            start: Instant::now(),
            set: ResultSet {
                task: cfg.task,
                n,
                d,
                baselines: Vec::new(),
                rows: Vec::new(),
            },
            planned: cfg.projection_dims.len(),
        }
    }

    fn check_deadline(&mut self) -> Result<(), ExperimentError> {
        let elapsed = self.start.elapsed();
        if elapsed > self.cfg.timeout {
            return Err(ExperimentError::Timeout {
                elapsed,
                planned: self.planned,
                partial: Box::new(std::mem::replace(
                    &mut self.set,
                    ResultSet {
                        task: self.cfg.task,
                        n: 0,
                        d: 0,
                        baselines: Vec::new(),
                        rows: Vec::new(),
                    },
                )),
            });
        }
        Ok(())
    }

    /// Runs `f(rep_seed) -> (ratio, words)` once per repetition and records
    /// the averaged row.
    fn row<F>(&mut self, t: usize, reps: usize, mut f: F) -> Result<(), ExperimentError>
    where
        F: FnMut(u64) -> Result<(f64, u64), ExperimentError>,
    {
        let mut ratios = 0.0;
        let mut words = None;
        let mut ms = 0.0;
        for rep in 0..reps {
            self.check_deadline()?;
            let t0 = Instant::now();
            let (r, w) = f(derive_seed(self.cfg.seed, rep as u64 + 1))?;
            ms += t0.elapsed().as_secs_f64() * 1e3;
            ratios += r;
            words.get_or_insert(w);
        }
        self.set.rows.push(ResultRow {
            projection_dim: t,
            ratio: ratios / reps as f64,
            wall_time_ms: if self.cfg.no_timing { 0.0 } else { ms / reps as f64 },
            comm_words: words.unwrap_or(0),
            seed: self.cfg.seed,
        });
        Ok(())
    }
}

fn prepare(cfg: &ExperimentConfig, p: &Matrix) -> Result<PartitionedDataset, ExperimentError> {
    cfg.validate(p.rows(), p.cols())?;
    Ok(partition_powerlaw(p, cfg.s, cfg.alpha, derive_seed(cfg.seed, 0))?)
}

fn maybe_center(cfg: &ExperimentConfig, p: &Matrix) -> Matrix {
    if cfg.center {
        center(p)
    } else {
        p.clone()
    }
}

/// Exact and randomized protocol runs are deterministic given their seed, so
/// only randomized backends repeat.
fn protocol_reps(cfg: &ExperimentConfig) -> usize {
    match cfg.backend {
        BackendChoice::Exact => 1,
        BackendChoice::Fast => cfg.repetitions,
    }
}

/// Ratio of `d²(P, top-r of the distributed result)` to `d²(P, global top-r)`.
/// For projection dim `t` the nodes send `t` factors and the coordinator keeps
/// `min(r, t)`.
pub fn run_lowrank(cfg: &ExperimentConfig, p: &Matrix) -> Result<ResultSet, ExperimentError> {
    let p = maybe_center(cfg, p);
    let data = prepare(cfg, &p)?;
    let (n, d) = p.shape();
    let r = cfg.rank;
    let best = Subspace::new(svd(&p)?.v.leading_columns(r))?;
    let base = dist_sq(&p, &best)?;
    let scale = p.frobenius_sq();
    let mut sweep = Sweep::new(cfg, n, d);
    sweep.set.baselines.push(Baseline {
        projection_dim: None,
        value: base,
    });
    for &t in &cfg.projection_dims {
        sweep.row(t, protocol_reps(cfg), |seed| {
            let res = run_dispca(&data, &protocol_params(cfg, d, t, r.min(t), seed))?;
            Ok((ratio(dist_sq(&p, &res.subspace)?, base, scale)?, res.transcript.total_words()))
        })?;
    }
    Ok(sweep.set)
}

/// Ratio of the distributed k-means cost to the best of `repetitions` Lloyd
/// runs (k-means++ seeding) on the global data.
pub fn run_kmeans(cfg: &ExperimentConfig, p: &Matrix) -> Result<ResultSet, ExperimentError> {
    let p = maybe_center(cfg, p);
    let data = prepare(cfg, &p)?;
    let (n, d) = p.shape();
    let k = cfg.rank;
    let base = best_lloyd(&p, k, Init::KMeansPlusPlus, LLOYD_MAX_ITERS, cfg.repetitions, derive_seed(cfg.seed, 1 << 32))?.cost;
    let scale = p.frobenius_sq();
    let mut sweep = Sweep::new(cfg, n, d);
    sweep.set.baselines.push(Baseline {
        projection_dim: None,
        value: base,
    });
    for &t in &cfg.projection_dims {
        sweep.row(t, cfg.repetitions, |seed| {
            let mut kc = DistKMeansConfig::new(k, cfg.eps, cfg.coreset_size, seed);
            kc.projection_dim = Some(t);
            let pp = protocol_params(cfg, d, t, t, seed);
            kc.backend = pp.backend;
            kc.sketch = pp.sketch;
            kc.rsvd_q = pp.rsvd_q;
            let out = distributed_kmeans(&data, &kc)?;
            Ok((ratio(out.solution.cost, base, scale)?, out.transcript.total_words()))
        })?;
    }
    Ok(sweep.set)
}

/// Ratio of the PCR fit error on the distributed top-`t` subspace to the fit
/// error on the global top-`t` subspace.
pub fn run_pcr(cfg: &ExperimentConfig, x: &Matrix, y: &[f64]) -> Result<ResultSet, ExperimentError> {
    if y.len() != x.rows() {
        return Err(ExperimentError::Config(format!("{} targets for {} rows", y.len(), x.rows())));
    }
    let x = maybe_center(cfg, x);
    let data = prepare(cfg, &x)?;
    let (n, d) = x.shape();
    let v = svd(&x)?.v;
    let scale = (y.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let mut sweep = Sweep::new(cfg, n, d);
    for &t in &cfg.projection_dims {
        let global = Subspace::new(v.leading_columns(t))?;
        let base = pcr(&x, y, &global, cfg.ridge)?.fit_error;
        sweep.set.baselines.push(Baseline {
            projection_dim: Some(t),
            value: base,
        });
        sweep.row(t, protocol_reps(cfg), |seed| {
            let res = run_dispca(&data, &protocol_params(cfg, d, t, t, seed))?;
            let err = pcr(&x, y, &res.subspace, cfg.ridge)?.fit_error;
            Ok((ratio(err, base, scale)?, res.transcript.total_words()))
        })?;
    }
    Ok(sweep.set)
}

/// Runs the configured task on a loaded dataset.
pub fn run(cfg: &ExperimentConfig, ds: &Dataset) -> Result<ResultSet, ExperimentError> {
    match cfg.task {
        Task::Lowrank => run_lowrank(cfg, &ds.features),
        Task::Kmeans => run_kmeans(cfg, &ds.features),
        Task::Pcr => {
            let (x, y) = match (&ds.targets, cfg.target_col) {
                (Some(y), None) => (ds.features.clone(), y.clone()),
                (_, col) => ds
                    .split_target(col.unwrap_or(ds.cols().saturating_sub(1)))
                    .map_err(ExperimentError::Config)?,
            };
            run_pcr(cfg, &x, &y)
        }
    }
}

/// `out.json` and `out.csv` next to each other; any `.json` / `.csv`
/// extension on `out` is replaced.
pub fn output_paths(out: &Path) -> (PathBuf, PathBuf) {
    let stem = match out.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("csv") => out.with_extension(""),
        _ => out.to_owned(),
    };
    let with = |ext: &str| {
        let mut s = stem.clone().into_os_string();
        s.push(".");
        s.push(ext);
        PathBuf::from(s)
    };
    (with("json"), with("csv"))
}

pub const CSV_HEADER: [&str; 4] = ["projection_dim", "ratio", "wall_time_ms", "comm_words"];

/// Writes the full result set as JSON and the rows as CSV.
pub fn emit_results(set: &ResultSet, out: &Path) -> Result<(PathBuf, PathBuf), ExperimentError> {
    if set.rows.is_empty() {
        return Err(ExperimentError::NoRows);
    }
    let (json_path, csv_path) = output_paths(out);
    let io = |path: &Path| {
        let path = path.to_owned();
        move |source| ExperimentError::Io { path, source }
    };
    let mut text = serde_json::to_string_pretty(set).expect("result set serializes");
    text.push('\n');
    fs::write(&json_path, text).map_err(io(&json_path))?;

    let csv_err = |source| ExperimentError::Csv {
        path: csv_path.clone(),
        source,
    };
    let mut w = csv::Writer::from_path(&csv_path).map_err(csv_err)?;
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in &set.rows {
        w.write_record([
            r.projection_dim.to_string(),
            r.ratio.to_string(),
            r.wall_time_ms.to_string(),
            r.comm_words.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io(&csv_path))?;
    Ok((json_path, csv_path))
}

pub fn read_results(path: &Path) -> Result<ResultSet, ExperimentError> {
    let text = fs::read_to_string(path).map_err(|source| ExperimentError::Io {
        path: path.to_owned(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))
}

/// Worker-thread cap from `DISPCA_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var("DISPCA_THREADS").ok()?.trim().parse().ok().filter(|&n| n > 0)
}

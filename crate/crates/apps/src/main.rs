use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

use dispca_apps::data::{load_libsvm, synthetic};
use dispca_apps::{
    emit_results, load_dataset, run, thread_cap, BackendChoice, Dataset, ExperimentConfig, ExperimentError, Format,
    Synthetic, SyntheticSpec, Task,
};

#[derive(Parser)]
#[command(name = "dispca", version, about = "Distributed PCA experiments: ratio vs projection dimension")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rank-r approximation error against global SVD.
    Lowrank(TaskArgs),
    /// Distributed k-means cost against global Lloyd.
    Kmeans(TaskArgs),
    /// Principal component regression error against global PCR.
    Pcr(TaskArgs),
    /// Run the property checks on synthetic data; nonzero exit on failure.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct TaskArgs {
    /// Input file; synthetic data is generated when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::CsvDense)]
    format: Format,
    /// Width for libsvm input (default: largest index seen).
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, default_value_t = 25)]
    nodes: usize,
    /// Power-law exponent for the row partition.
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    /// r for lowrank, k for kmeans.
    #[arg(long, visible_alias = "clusters", default_value_t = 10)]
    rank: usize,
    /// Defaults to 0.3 for kmeans and 0.5 otherwise.
    #[arg(long)]
    eps: Option<f64>,
    /// Comma-separated projection dimensions.
    #[arg(long, value_delimiter = ',')]
    dims: Vec<usize>,
    #[arg(long, value_enum, default_value_t = BackendChoice::Exact)]
    backend: BackendChoice,
    /// Boost each node's sketch with this failure probability (fast backend).
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, default_value_t = 1)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output stem; writes <out>.json and <out>.csv.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Seconds before the sweep stops (partial results are still written).
    #[arg(long, default_value_t = 600)]
    timeout: u64,
    /// Total sampled points for kmeans.
    #[arg(long, default_value_t = 200)]
    coreset: usize,
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
    /// Target column for pcr (default: last column, or the libsvm labels).
    #[arg(long)]
    target_col: Option<usize>,
    /// Subtract column means first.
    #[arg(long)]
    center: bool,
    /// Write zero wall times so repeated runs give identical files.
    #[arg(long)]
    no_timing: bool,
    #[arg(long, value_enum, default_value_t = Synthetic::LowRank)]
    synthetic: Synthetic,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 50)]
    d: usize,
    /// Clusters or signal rank of the synthetic data (default: --rank).
    #[arg(long)]
    components: Option<usize>,
}

impl TaskArgs {
    fn dataset(&self) -> Result<Dataset> {
        match &self.data {
            Some(path) if self.format == Format::Libsvm => Ok(load_libsvm(path, self.dim)?),
            Some(path) => Ok(load_dataset(path, self.format)?),
            None => Ok(synthetic(&SyntheticSpec {
                kind: self.synthetic,
                n: self.n,
                d: self.d,
                components: self.components.unwrap_or(self.rank),
                seed: self.seed,
            })),
        }
    }

    fn config(&self, task: Task, d: usize) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(task);
        cfg.dataset_path = self.data.clone();
        cfg.format = self.format;
        cfg.s = self.nodes;
        cfg.alpha = self.alpha;
        cfg.rank = self.rank;
        if let Some(eps) = self.eps {
            cfg.eps = eps;
        }
        cfg.backend = self.backend;
        cfg.delta = self.delta;
        cfg.repetitions = self.reps;
        cfg.seed = self.seed;
        cfg.coreset_size = self.coreset;
        cfg.ridge = self.ridge;
        cfg.target_col = self.target_col;
        cfg.center = self.center;
        cfg.timeout = Duration::from_secs(self.timeout);
        cfg.no_timing = self.no_timing;
        cfg.projection_dims = if self.dims.is_empty() {
            cfg.default_dims(d)
        } else {
            self.dims.clone()
        };
        cfg
    }
}

fn configure_threads() -> Result<()> {
    #[cfg(feature = "parallel")]
    if let Some(n) = thread_cap() {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| anyhow::anyhow!("configuring worker threads: {e}"))?;
    }
    #[cfg(not(feature = "parallel"))]
    let _ = thread_cap();
    Ok(())
}

fn run_task(task: Task, args: &TaskArgs) -> Result<ExitCode> {
    let ds = args.dataset()?;
    let d = if task == Task::Pcr && (ds.targets.is_none() || args.target_col.is_some()) {
        ds.cols().saturating_sub(1)
    } else {
        ds.cols()
    };
    let cfg = args.config(task, d);
    eprintln!(
        "{} rows x {} columns, {} nodes, dims {:?}",
        ds.rows(),
        ds.cols(),
        cfg.s,
        cfg.projection_dims
    );
    let (set, code) = match run(&cfg, &ds) {
        Ok(set) => (set, ExitCode::SUCCESS),
        Err(ExperimentError::Timeout { elapsed, planned, partial }) => {
            eprintln!("timed out after {elapsed:?}: {} of {planned} dims done", partial.rows.len());
            if partial.rows.is_empty() {
                bail!("timed out before any projection dim finished");
            }
            (*partial, ExitCode::from(2))
        }
        Err(e) => return Err(e.into()),
    };
    for r in &set.rows {
        println!(
            "t = {:>4}  ratio = {:.6}  words = {:>10}  {:.1} ms",
            r.projection_dim, r.ratio, r.comm_words, r.wall_time_ms
        );
    }
    let (json, csv) = emit_results(&set, &args.out)?;
    eprintln!("wrote {} and {}", json.display(), csv.display());
    Ok(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|_| match &cli.command {
        Command::Lowrank(a) => run_task(Task::Lowrank, a),
        Command::Kmeans(a) => run_task(Task::Kmeans, a),
        Command::Pcr(a) => run_task(Task::Pcr, a),
        Command::Verify { seed } => {
            let mut ok = true;
            for c in dispca::verify::run_suite(*seed) {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                ok &= c.passed;
            }
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

//! Single and repeated training runs driven by an [`ExperimentConfig`].

use std::fmt::Write as _;
use std::path::PathBuf;

use log::info;
use rayon::prelude::*;

use gcnn::data::{synthetic, Dataset, MnistPaths, Split};
use gcnn::init::{layer_ratios, InitReport};
use gcnn::optim::{run_init, train, RunResult};
use gcnn::stats::RunSummary;
use gcnn::tensor::moments;
use gcnn::Network;

use crate::config::{DataSource, ExperimentConfig};
use crate::metrics::{write_summary, MetricsWriter};
use crate::CliError;

/// Seeds of the synthetic train and test splits.
const SYNTHETIC_SEEDS: (u64, u64) = (1, 2);

pub struct Datasets {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<Datasets, CliError> {
    let d = &cfg.data;
    let (train, test) = match d.source {
        DataSource::Mnist => {
            let dir = d.resolved_mnist_dir();
            let paths = MnistPaths::in_dir(&dir);
            if !paths.all_exist() {
                return Err(CliError::Runtime(format!(
                    "MNIST files not found in {} (set `mnist_dir` or ${}; see README)",
                    dir.display(),
                    crate::config::MNIST_DIR_ENV
                )));
            }
            paths.load()?
        }
        DataSource::Synthetic => (
            synthetic(d.synthetic_train, SYNTHETIC_SEEDS.0, Split::Train),
            synthetic(d.synthetic_test, SYNTHETIC_SEEDS.1, Split::Test),
        ),
    };
    let limit = |ds: Dataset, n: usize| if n == 0 || n >= ds.len() { Ok(ds) } else { ds.head(n) };
    Ok(Datasets {
        train: limit(train, d.train_limit)?,
        test: limit(test, d.test_limit)?,
    })
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub index: usize,
    pub result: RunResult,
    pub csv: PathBuf,
    pub snapshot: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub runs: Vec<RunOutcome>,
    pub summary: RunSummary,
    pub summary_path: PathBuf,
}

fn output_dir(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let dir = cfg.resolved_output_dir();
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    Ok(dir)
}

pub fn csv_path(cfg: &ExperimentConfig, run: usize) -> PathBuf {
    cfg.resolved_output_dir()
        .join(format!("{}_run{run:02}.csv", cfg.display_name()))
}

pub fn snapshot_path(cfg: &ExperimentConfig, run: usize) -> PathBuf {
    cfg.resolved_output_dir()
        .join(format!("{}_run{run:02}.gcnn", cfg.display_name()))
}

/// Trains run `run` (seed `base_seed + run`), streaming its metrics CSV.
pub fn run_one(cfg: &ExperimentConfig, data: &Datasets, run: usize, snapshot: bool) -> Result<RunOutcome, CliError> {
    let seed = cfg.seed(run);
    let attach = |e: CliError| CliError::Runtime(format!("run {run} (seed {seed}): {e}"));
    output_dir(cfg)?;
    let tc = cfg.train_config(run);
    let mut net = Network::build(&cfg.network, seed).map_err(|e| attach(e.into()))?;
    let csv = csv_path(cfg, run);
    let mut writer = MetricsWriter::create(&csv)?;
    let mut sink_error = None;
    let result = train(&mut net, &data.train, &data.test, &tc, &mut |p| {
        writer.append(p).map_err(|e| {
            let msg = e.to_string();
            sink_error = Some(e);
            gcnn::Error::InvalidArgument(msg)
        })
    });
    if let Some(e) = sink_error {
        return Err(attach(e));
    }
    let result = result.map_err(|e| attach(e.into()))?;
    let snapshot = if snapshot {
        let path = snapshot_path(cfg, run);
        net.save_snapshot(&path).map_err(|e| attach(e.into()))?;
        Some(path)
    } else {
        None
    };
    info!(
        "{} run {run} (seed {seed}): accuracy {:.4} in {:.1}s",
        cfg.display_name(),
        result.final_accuracy,
        result.wall_time.as_secs_f64()
    );
    Ok(RunOutcome {
        index: run,
        result,
        csv,
        snapshot,
    })
}

/// Runs `cfg.repeat` seeds on a pool of `cfg.workers` threads and writes the
/// summary file. Results are ordered by run index whatever the pool does.
pub fn run_experiment(cfg: &ExperimentConfig, data: &Datasets) -> Result<ExperimentResult, CliError> {
    let dir = output_dir(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CliError::Runtime(format!("cannot start worker pool: {e}")))?;
    let runs: Vec<RunOutcome> = pool.install(|| {
        (0..cfg.repeat)
            .into_par_iter()
            .map(|i| run_one(cfg, data, i, cfg.snapshot))
            .collect::<Result<_, _>>()
    })?;
    let summary = RunSummary::new(runs.iter().map(|r| r.result.final_accuracy).collect());
    let summary_path = dir.join(format!("{}_summary.txt", cfg.display_name()));
    write_summary(&summary_path, cfg.display_name(), &summary)?;
    Ok(ExperimentResult {
        runs,
        summary,
        summary_path,
    })
}

/// Applies the start-of-training initializer to a freshly built network and
/// describes the result: the initializer's own report, then per-unit signal
/// statistics and gradient ratios on the init batch.
pub fn inspect_init(cfg: &ExperimentConfig, data: &Datasets, run: usize) -> Result<(InitReport, String), CliError> {
    let tc = cfg.train_config(run);
    let mut net = Network::build(&cfg.network, tc.seed)?;
    let report = run_init(&mut net, &cfg.init, &data.train, &tc, 0)?;
    let n = tc.init_batch.min(data.train.len());
    let idx: Vec<usize> = (0..n).collect();
    let (x, y) = data.train.batch(&idx)?;
    let ratios = layer_ratios(&mut net, &x, &y)?;
    let mut table = String::new();
    let _ = writeln!(
        table,
        "{:<10} {:>12} {:>12} {:>12}",
        "unit", "signal_mean", "signal_std", "grad_ratio"
    );
    for (unit, (_, ratio)) in net.units().to_vec().iter().zip(ratios) {
        let (m, s) = moments(&net.forward_to(&x, unit.signal)?);
        let _ = writeln!(table, "{:<10} {:>12.6} {:>12.6} {:>12.4e}", unit.name, m, s, ratio);
    }
    Ok((report, table))
}

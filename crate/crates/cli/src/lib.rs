//! Experiment runner for generalized-convolution networks: config files,
//! single and repeated training runs, metrics CSVs, summaries, pairwise
//! Welch tests and the gradient-check release gate.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 runtime failure
//! (including a failing gradient check).

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use gcnn::gradcheck::{layer_kinds, run_all, CheckOptions, SuiteOptions};
use gcnn::optim::evaluate;
use gcnn::stats::{format_percent, welch_t_test};
use gcnn::Network;

pub mod config;
pub mod experiment;
pub mod metrics;

pub use config::{parse_file, parse_str, ConfigError, ExperimentConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<gcnn::Error> for CliError {
    fn from(e: gcnn::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "gcnn", version, about = "Train and evaluate generalized-convolution networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one run and save its snapshot.
    Train {
        config: PathBuf,
        /// Run index; the seed is base_seed + run.
        #[arg(long, default_value_t = 0)]
        run: usize,
    },
    /// Test-set accuracy of a saved snapshot.
    Eval { config: PathBuf, snapshot: PathBuf },
    /// Train `repeat` seeds and print the mean±std summary.
    Repeat { config: PathBuf },
    /// Run the finite-difference and oracle-equivalence suites.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// Negate the backward pass of one layer kind (mutation check).
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
    /// Apply the configured initializer and report signal statistics.
    InitInspect {
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        run: usize,
    },
    /// Print the fully expanded configuration.
    DumpConfig { config: PathBuf },
    /// Pairwise Welch t-tests between summary files or `LABEL=MEAN±STD%@N` cells.
    Compare {
        #[arg(required = true, num_args = 2..)]
        groups: Vec<String>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
}

fn write(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::Runtime(format!("cannot write output: {e}")))
}

pub fn execute(cmd: &Command, out: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        Command::Train { config, run } => {
            let cfg = parse_file(config)?;
            let data = experiment::load_data(&cfg)?;
            let outcome = experiment::run_one(&cfg, &data, *run, true)?;
            write(
                out,
                &format!(
                    "run {run} seed {}: test accuracy {:.3}% ({:.1}s)\nmetrics: {}\nsnapshot: {}\n",
                    outcome.result.seed,
                    100.0 * outcome.result.final_accuracy,
                    outcome.result.wall_time.as_secs_f64(),
                    outcome.csv.display(),
                    outcome.snapshot.as_deref().map_or(String::new(), |p| p.display().to_string())
                ),
            )
        }
        Command::Eval { config, snapshot } => {
            let cfg = parse_file(config)?;
            let data = experiment::load_data(&cfg)?;
            let mut net = Network::build(&cfg.network, cfg.base_seed)?;
            net.load_snapshot(snapshot)?;
            let acc = evaluate(&mut net, &data.test, cfg.train.eval_batch)?;
            write(out, &format!("test accuracy {:.3}% on {} samples\n", 100.0 * acc, data.test.len()))
        }
        Command::Repeat { config } => {
            let cfg = parse_file(config)?;
            let data = experiment::load_data(&cfg)?;
            let res = experiment::run_experiment(&cfg, &data)?;
            let mut text = String::new();
            for r in &res.runs {
                text += &format!(
                    "run {:>2} seed {}: {:.3}%  {}\n",
                    r.index,
                    r.result.seed,
                    100.0 * r.result.final_accuracy,
                    r.csv.display()
                );
            }
            text += &format!(
                "{}: {} over {} runs\nsummary: {}\n",
                cfg.display_name(),
                res.summary.format_percent(),
                res.summary.count(),
                res.summary_path.display()
            );
            write(out, &text)
        }
        Command::Gradcheck { instances, seed, corrupt } => {
            let corrupt = match corrupt {
                None => None,
                Some(name) => Some(
                    layer_kinds()
                        .into_iter()
                        .find(|k| k.to_string().eq_ignore_ascii_case(name))
                        .ok_or_else(|| CliError::Usage(format!("unknown layer kind `{name}`")))?,
                ),
            };
            let opts = SuiteOptions {
                instances: *instances,
                seed: *seed,
                check: CheckOptions { corrupt, ..Default::default() },
            };
            let report = run_all(&opts)?;
            write(out, &format!("{report}\n"))?;
            if report.passed() {
                Ok(())
            } else {
                let failed: Vec<&str> = report.lines.iter().filter(|l| !l.passed()).map(|l| l.name.as_str()).collect();
                Err(CliError::Runtime(format!("gradient check failed: {}", failed.join(", "))))
            }
        }
        Command::InitInspect { config, run } => {
            let cfg = parse_file(config)?;
            let data = experiment::load_data(&cfg)?;
            let (report, table) = experiment::inspect_init(&cfg, &data, *run)?;
            write(out, &format!("{report}\n\nafter init:\n{table}"))
        }
        Command::DumpConfig { config } => write(out, &parse_file(config)?.dump()),
        Command::Compare { groups, alpha } => {
            let groups = groups
                .iter()
                .map(|g| metrics::Group::resolve(g))
                .collect::<Result<Vec<_>, _>>()?;
            write(out, &compare(&groups, *alpha)?)
        }
    }
}

/// One line per group, then every pair with Welch's t, dof and two-sided p.
pub fn compare(groups: &[metrics::Group], alpha: f64) -> Result<String, CliError> {
    let mut text = String::new();
    for g in groups {
        text += &format!("{:<24} {} (n={})\n", g.label, format_percent(g.mean, g.std), g.count);
    }
    for (i, a) in groups.iter().enumerate() {
        for b in &groups[i + 1..] {
            let w = welch_t_test(a.mean, a.std, a.count, b.mean, b.std, b.count)?;
            text += &format!(
                "{} vs {}: t = {:.3}, dof = {:.1}, p = {:.4}{}\n",
                a.label,
                b.label,
                w.t,
                w.dof,
                w.p,
                if w.p < alpha { " (significant)" } else { "" }
            );
        }
    }
    Ok(text)
}

/// Parses `args` (program name first), executes, and returns the exit code.
pub fn main_with(args: impl IntoIterator<Item = OsString>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    match execute(&cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
